"""Error-bound evaluation, a deterministic d=1 Picard oracle, and
replication statistics.

The bound evaluator reports, for a z-free generator with declared
constants, the three-term bias bound

    n C2 C_d sqrt(Q) (e / 8Q)^(2Q)                (time quadrature)
  + (C1 / sqrt(M))^n exp(C_f sqrt(M) (T-t) (1 + 1/C1))   (Monte Carlo)
  + C_y (T-t)^n C_f^n / n!                        (Picard contraction)

with C1 = max{2 (1 + 1/sqrt(M)), C_phi + C_0 T} and C2 the supremum over
k >= 1 of (e^(1/3) sqrt(pi) / 2) C_f^(k-1) T^(2Q+k) / ((2Q+1)...(2Q+k)),
plus the variance bound (C1 / sqrt(M)) exp(C_f sqrt(M) (T-t)).  The terms
decay factorially in k, so the supremum is found by a finite scan.

The oracle iterates the integral fixed-point map deterministically on a
one-dimensional space grid: Gaussian expectations are Gauss-Legendre
integrals over an 8-sigma window, and iterate values between grid points
come from barycentric interpolation.  For a generator linear in y the
oracle equals the exact expectation of either stochastic scheme at the
same time-quadrature order, which makes it a bias oracle that is sharper
than any analytic solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .mlp import (REPLICATION_LEVEL, InvalidTimeError, MlpConfig,
                  _check_time, _prepare_point, run_batch)
from .problems import BsdeProblem
from .quadrature import build_rule
from .sampling import StreamKey, child_digests

MAX_ORACLE_DEPTH = 6
_TAIL_SIGMAS = 8.0     # Gaussian windows truncated at 8 standard deviations
# interpolation hull half-width, in sqrt(T) units; 12 = 8 + 4 keeps every
# displaced evaluation point whose path weight exceeds ~exp(-38) inside the
# hull, so clipping never contaminates the iterates
_GRID_SIGMAS = 12.0
_DISPLACEMENT_NODES = 64


class TheoremNotApplicableError(ValueError):
    """Bound requested outside the covered problem class."""


class MissingBoundsError(ValueError):
    """Problem does not declare every constant the bound needs."""


class OracleUnavailableError(ValueError):
    """Deterministic oracle does not cover the requested problem."""


@dataclass(frozen=True)
class TheoremBound:
    """Literal evaluation of the a-priori error bound."""

    bias_bound: float
    variance_bound: float
    quadrature_term: float
    mc_term: float
    picard_term: float
    c1: float
    c2: float


def _c2_supremum(f_lip: float, horizon: float, q: int) -> float:
    """sup_k C_f^(k-1) T^(2q+k) / ((2q+1)...(2q+k)), by term scanning.

    Successive terms carry ratio C_f T / (2q+k+1), which eventually decays
    like 1/k; the scan stops once terms underflow or fall far below the
    running maximum on the decreasing tail.
    """
    term = horizon ** (2 * q + 1) / (2 * q + 1)
    best = term
    for k in range(2, 100_000):
        term *= f_lip * horizon / (2 * q + k)
        if term > best:
            best = term
        elif term < best * 1e-18 or term < 1e-300:
            break
    return (math.exp(1.0 / 3.0) * math.sqrt(math.pi) / 2.0) * best


_BOUND_FIELDS = (
    ("f_lipschitz", "generator Lipschitz constant"),
    ("f_zero_bound", "bound on f(t, 0)"),
    ("terminal_bound", "terminal-condition bound"),
    ("solution_bound", "solution bound"),
    ("expectation_derivative_bound", "smoothed-generator derivative bound"),
)


def theorem_bound(problem: BsdeProblem, cfg: MlpConfig, t: float) -> TheoremBound:
    """Evaluate the a-priori bias and variance bounds at depth cfg.depth.

    Requires a z-free generator and all five declared constants; the
    quadrature term is evaluated with horizon constants (C2 uses T, not
    T - t), the other terms with the remaining time T - t.
    """
    if problem.generator_uses_z:
        raise TheoremNotApplicableError(
            "error bounds cover generators f(t, y) only; "
            f"problem {problem.name!r} declares generator_uses_z")
    if cfg.depth < 1:
        raise TheoremNotApplicableError("bounds are stated for depth >= 1")
    bounds = problem.bounds
    missing = [name for name, _ in _BOUND_FIELDS
               if bounds is None or getattr(bounds, name) is None]
    if missing:
        raise MissingBoundsError(
            f"problem {problem.name!r} does not declare: {', '.join(missing)}")
    T = problem.horizon
    t = float(t)
    if not 0.0 <= t <= T:
        raise InvalidTimeError(f"t must lie in [0, {T}], got {t}")

    n, M, q = cfg.depth, cfg.base_samples, cfg.quad_order
    f_lip = bounds.f_lipschitz
    c1 = max(2.0 * (1.0 + 1.0 / math.sqrt(M)),
             bounds.terminal_bound + bounds.f_zero_bound * T)
    c2 = _c2_supremum(f_lip, T, q)
    tau = T - t

    quad = (n * c2 * bounds.expectation_derivative_bound * math.sqrt(q)
            * (math.e / (8.0 * q)) ** (2 * q))
    mc = ((c1 / math.sqrt(M)) ** n
          * math.exp(f_lip * math.sqrt(M) * tau * (1.0 + 1.0 / c1)))
    picard = (bounds.solution_bound * tau ** n * f_lip ** n
              / math.factorial(n))
    variance = (c1 / math.sqrt(M)) * math.exp(f_lip * math.sqrt(M) * tau)
    return TheoremBound(
        bias_bound=quad + mc + picard,
        variance_bound=variance,
        quadrature_term=quad,
        mc_term=mc,
        picard_term=picard,
        c1=c1,
        c2=c2,
    )


@lru_cache(maxsize=8)
def _reference_gauss(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=8)
def _barycentric_weights(n: int) -> np.ndarray:
    # for Gauss-Legendre nodes: lambda_m proportional to
    # (-1)^m sqrt((1 - x_m^2) w_m); common factors cancel in the formula
    nodes, weights = _reference_gauss(n)
    lam = np.sqrt((1.0 - nodes * nodes) * weights)
    lam[1::2] *= -1.0
    lam.setflags(write=False)
    return lam


def _interp_rows(grid: np.ndarray, lam: np.ndarray,
                 pts: np.ndarray) -> np.ndarray:
    """Row-normalized barycentric weights; rows @ values interpolates."""
    diff = pts[:, None] - grid[None, :]
    hit = np.abs(diff) < 1e-13
    w = lam[None, :] / np.where(hit, 1.0, diff)
    rows = w / w.sum(axis=1, keepdims=True)
    exact = hit.any(axis=1)
    if exact.any():
        rows[exact] = hit[exact].astype(np.float64)
    return rows


def deterministic_picard(problem: BsdeProblem, depth: int, quad_order: int,
                         t: float, x, space_quad: int = 200) -> float:
    """Deterministic fixed-point iterate at (t, x) for d = 1 problems.

    Uses the same time-quadrature rule as the stochastic schemes and a
    space_quad-node Gauss-Legendre grid on [x - 12 sqrt(T), x + 12 sqrt(T)];
    depth is capped at 6 because the time-node tree grows like
    quad_order^depth.
    """
    if problem.dim != 1:
        raise OracleUnavailableError(
            f"oracle covers d = 1 only, got dim={problem.dim}")
    if problem.generator_uses_z:
        raise OracleUnavailableError(
            "oracle covers generators f(t, y) only; "
            f"problem {problem.name!r} declares generator_uses_z")
    if not 0 <= depth <= MAX_ORACLE_DEPTH:
        raise ValueError(f"depth must lie in 0..{MAX_ORACLE_DEPTH}, got {depth}")
    if space_quad < 8:
        raise ValueError("space_quad must be >= 8")
    t = _check_time(problem, t)
    if depth == 0:
        return 0.0
    x0 = float(_prepare_point(problem, x)[0])
    T = problem.horizon

    ref_nodes, _ = _reference_gauss(space_quad)
    lam = _barycentric_weights(space_quad)
    half = _GRID_SIGMAS * math.sqrt(T)
    grid = x0 + half * ref_nodes
    u_nodes, u_weights = _reference_gauss(_DISPLACEMENT_NODES)

    def convolve(tau, values=None, fn=None):
        # E[g(grid_m + W_tau)] for every grid point, as one quadrature
        scale = _TAIL_SIGMAS * math.sqrt(tau)
        u = scale * u_nodes
        dens = (scale * u_weights) * np.exp(-u * u / (2.0 * tau)) \
            / math.sqrt(2.0 * math.pi * tau)
        pts = grid[:, None] + u[None, :]
        if fn is not None:
            vals = fn(pts[..., None])
        else:
            clipped = np.clip(pts, grid[0], grid[-1]).ravel()
            vals = (_interp_rows(grid, lam, clipped) @ values)
            vals = vals.reshape(pts.shape)
        return vals @ dens

    zero_z = np.zeros((space_quad, 1))
    memo: dict = {}

    def iterate(k: int, s: float) -> np.ndarray:
        if k == 0:
            return np.zeros(space_quad)
        key = (k, s)
        if key in memo:
            return memo[key]
        vec = convolve(T - s, fn=problem.terminal)
        rule = build_rule(quad_order, s, T)
        for j in range(quad_order):
            t_j = float(rule.nodes[j])
            w_j = float(rule.weights[j])
            prev = iterate(k - 1, t_j)
            f_prev = np.asarray(problem.generator(t_j, prev, zero_z),
                                dtype=np.float64)
            vec = vec + w_j * convolve(t_j - s, values=f_prev)
        memo[key] = vec
        return vec

    final = iterate(depth, t)
    return float((_interp_rows(grid, lam, np.array([x0])) @ final)[0])


@dataclass(frozen=True)
class RunStats:
    """Sample statistics over independent estimator replications."""

    replications: int
    mean_y: float
    std_y: float
    abs_error: Optional[float]
    mean_cost: dict
    mean_z: Optional[np.ndarray]


def run_replications(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
                     replications: int,
                     keys: Optional[Sequence[StreamKey]] = None) -> RunStats:
    """Run independent replications and reduce them in fixed order.

    Replication r draws its stream from the reserved child
    (level REPLICATION_LEVEL, replica r, slot 0) of the seed's root key;
    passing keys explicitly overrides the derivation (deliberately equal
    keys give std_y = 0).
    """
    R = int(replications)
    if R < 2:
        raise ValueError(f"replications must be >= 2, got {replications}")
    if keys is not None:
        if len(keys) != R:
            raise ValueError("keys, when given, must supply one per replication")
        digests = np.array([k.digest for k in keys], dtype=np.uint64)
    else:
        root = np.array([StreamKey.from_seed(cfg.seed).digest], dtype=np.uint64)
        digests = child_digests(root, REPLICATION_LEVEL, 0, np.arange(R))[0]

    ys, zs, counters, _ = run_batch(problem, cfg, t, x, digests)
    mean_y = float(ys.mean())
    std_y = float(ys.std(ddof=1))
    abs_error = None
    if problem.reference is not None:
        u = float(problem.reference.u(t, _prepare_point(problem, x)))
        abs_error = abs(mean_y - u)
    return RunStats(
        replications=R,
        mean_y=mean_y,
        std_y=std_y,
        abs_error=abs_error,
        mean_cost={k: v / R for k, v in counters.as_dict().items()},
        mean_z=zs.mean(axis=0) if zs is not None else None,
    )
