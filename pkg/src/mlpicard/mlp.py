"""Multilevel Picard estimators for BSDEs with exact cost accounting.

Two estimators of the solution pair (y, z) at a space-time query point:

* original: level-n estimate with a fresh M^n-sample terminal average and,
  for each level l < n, M^(n-l) samples of the generator difference
  f(y_l) - f(y_{l-1}) at quadrature-displaced points.  Minuend and
  subtrahend recursions at a sampled point use independent streams.
* modified: level-n estimate as the mean of M i.i.d. copies of the
  level-(n-1) estimator at the query point, plus a single quadrature
  correction with the difference f(y_{n-1}) - f(y_{n-2}) at each sampled
  point.  Because a level-(n-1) traversal contains level-(n-2) copies of
  itself at its own query point, the first such copy serves as the
  subtrahend: both generator arguments at a sampled point come out of ONE
  recursion.  With cache=False the same keyed traversal is simply run a
  second time to extract the subtrahend, which reproduces the identical
  value while paying the redundant cost; y estimates are bit-equal either
  way, only the counters move.

z estimates use the kernel-weighted forms: the terminal part is the
control-variate expression (phi(x+W) - phi(x)) W / (T-t), and quadrature
corrections reuse the displacing increment as the kernel weight.  For the
modified scheme at depth >= 2 the leading z term is the plain mean of the
copies' z estimates; strict_printed_form=True switches it to the
kernel-reweighted mean with fresh terminal-horizon increments
(componentwise product), kept only for comparison because its expectation
degenerates.

Counters follow exact recurrences (per run; Q = quad_order, M =
base_samples).  generator_evals for the modified scheme:

    cost(0) = 0, cost(1) = Q
    cache on:  cost(k) = M cost(k-1) + Q M (cost(k-1) + 2)
    cache off: same through k = 2, then
               cost(k) = M cost(k-1) + Q M (2 cost(k-1) + 2)

and for the original scheme:

    g(0) = 0, g(n) = Q + sum_{l=1}^{n-1} Q M^(n-l) (2 + g(l) + g(l-1)).

cache_hits counts reused subtrahend evaluations: hits(k) =
(M + Q M) hits(k-1) + Q M [k >= 3], so hits > 0 exactly when depth >= 3.

All randomness derives from sampling-module stream keys; every reduction
is a per-row mean in a fixed order, so results are bit-identical under any
thread count or batch chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .problems import BsdeProblem
from .quadrature import MAX_ORDER, build_rule
from .sampling import StreamKey, child_digests, normal_block

MAX_DEPTH = 10
SINGULARITY_FLOOR = 1e-12
REPLICATION_LEVEL = 63  # reserved stream level for replication fan-out
_SPINE_SLOT = 0         # modified: i.i.d. copies at the frame's own point
_POINT_SLOT = 1         # modified: slot 1+j for quadrature point j
_MINUEND_SLOT = 1       # original: slot 1+2j at level l
_SUBTRAHEND_SLOT = 2    # original: slot 2+2j at level l-1
_CHUNK_VALUES = 1 << 22  # cap on Gaussian values materialized at once


class InvalidTimeError(ValueError):
    """Query time outside [0, horizon)."""


@dataclass(frozen=True)
class MlpConfig:
    """Estimator settings shared by both scheme variants."""

    variant: str
    depth: int
    base_samples: int
    quad_order: int
    seed: int = 0
    estimate_z: bool = False
    cache: bool = True
    strict_printed_form: bool = False

    def __post_init__(self):
        if self.variant not in ("original", "modified"):
            raise ValueError(f"variant must be original|modified, got {self.variant!r}")
        if not 0 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must lie in 0..{MAX_DEPTH}, got {self.depth}")
        if self.base_samples < 1:
            raise ValueError("base_samples must be >= 1")
        if not 1 <= self.quad_order <= MAX_ORDER:
            raise ValueError(f"quad_order must lie in 1..{MAX_ORDER}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class CostCounters:
    generator_evals: int = 0
    terminal_evals: int = 0
    gaussian_draws: int = 0
    cache_hits: int = 0

    def __add__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(
            self.generator_evals + other.generator_evals,
            self.terminal_evals + other.terminal_evals,
            self.gaussian_draws + other.gaussian_draws,
            self.cache_hits + other.cache_hits,
        )

    def as_dict(self) -> dict:
        return {
            "generator_evals": self.generator_evals,
            "terminal_evals": self.terminal_evals,
            "gaussian_draws": self.gaussian_draws,
            "cache_hits": self.cache_hits,
        }


@dataclass(frozen=True)
class Estimate:
    """One realized estimator value with its exact cost."""

    y: float
    z: Optional[np.ndarray]
    cost: CostCounters
    diff_accum: float


@dataclass(frozen=True)
class PairEstimate:
    """Joint value of consecutive-depth estimates from one recursion tree."""

    y: float
    y_prev: float
    z: Optional[np.ndarray]
    z_prev: Optional[np.ndarray]
    cost: CostCounters
    diff_accum: float


class _FrameResult(NamedTuple):
    y: np.ndarray
    z: Optional[np.ndarray]
    y_prev: Optional[np.ndarray]
    z_prev: Optional[np.ndarray]


class _Ctx:
    """Per-run state threaded through the recursion."""

    __slots__ = ("problem", "cfg", "d", "horizon", "M", "Q", "uses_z",
                 "counters", "diff", "groups")

    def __init__(self, problem: BsdeProblem, cfg: MlpConfig, groups: int):
        self.problem = problem
        self.cfg = cfg
        self.d = problem.dim
        self.horizon = problem.horizon
        self.M = cfg.base_samples
        self.Q = cfg.quad_order
        self.uses_z = problem.generator_uses_z
        self.counters = CostCounters()
        self.diff = np.zeros(groups)
        self.groups = groups


def _group_sum(ctx: _Ctx, values: np.ndarray) -> np.ndarray:
    # rows stay contiguous per top-level replication throughout the tree
    return values.reshape(ctx.groups, -1).sum(axis=1)


def _zeros_result(B: int, d: int, need_z: bool) -> _FrameResult:
    z = np.zeros((B, d)) if need_z else None
    return _FrameResult(np.zeros(B), z, None, None)


def _leaf_frame(ctx: _Ctx, dig: np.ndarray, xs: np.ndarray, s: float,
                need_z: bool) -> _FrameResult:
    """Depth-1 frame, shared verbatim by both variants.

    Stream layout per key: counters [0, M d) hold the terminal increments;
    the kernel increments for quadrature node j live at [(1+j) M d,
    (2+j) M d), reserved whether or not z is requested.
    """
    B = dig.size
    M, d = ctx.M, ctx.d
    tau = ctx.horizon - s
    assert tau > SINGULARITY_FLOOR
    rule = build_rule(ctx.Q, s, ctx.horizon)
    sq = math.sqrt(tau)

    y = np.empty(B)
    z = np.empty((B, d)) if need_z else None
    chunk = max(1, _CHUNK_VALUES // (M * d))
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        w = normal_block(dig[lo:hi], 0, M * d).reshape(hi - lo, M, d) * sq
        phi = ctx.problem.terminal(xs[lo:hi, None, :] + w)
        y[lo:hi] = phi.mean(axis=1)
        if need_z:
            phi0 = ctx.problem.terminal(xs[lo:hi])
            z[lo:hi] = ((phi - phi0[:, None])[:, :, None] * w).mean(axis=1) / tau
    ctx.counters.terminal_evals += B * M + (B if need_z else 0)
    ctx.counters.gaussian_draws += B * M

    zero_y = np.zeros(B)
    zero_z = np.zeros((B, d))
    for j in range(ctx.Q):
        t_j = float(rule.nodes[j])
        w_j = float(rule.weights[j])
        dt = t_j - s
        assert dt > SINGULARITY_FLOOR
        f0 = np.asarray(ctx.problem.generator(t_j, zero_y, zero_z), dtype=np.float64)
        ctx.counters.generator_evals += B
        y += w_j * f0
        if need_z:
            off = (1 + j) * M * d
            for lo in range(0, B, chunk):
                hi = min(B, lo + chunk)
                wk = normal_block(dig[lo:hi], off, M * d).reshape(hi - lo, M, d)
                z[lo:hi] += (w_j / dt) * f0[lo:hi, None] * (
                    wk.mean(axis=1) * math.sqrt(dt))
            ctx.counters.gaussian_draws += B * M
    return _FrameResult(y, z, None, None)


def _modified_frame(ctx: _Ctx, dig: np.ndarray, xs: np.ndarray, s: float,
                    k: int, need_z: bool, need_pair: bool,
                    record: bool) -> _FrameResult:
    """Modified-scheme frame at depth k >= 1 for a batch of rows.

    Stream layout per key: quadrature node j uses counters
    [j M d, (j+1) M d) for the displacing increments; the optional
    strict-form terminal increments live at [Q M d, (Q+1) M d).
    Children: the M spine copies are (level k-1, slot 0, replica i), the
    per-node sampled points are (level k-1, slot 1+j, replica i).
    """
    B = dig.size
    M, d = ctx.M, ctx.d
    if k == 1:
        res = _leaf_frame(ctx, dig, xs, s, need_z)
        if need_pair:
            res = res._replace(y_prev=np.zeros(B),
                               z_prev=np.zeros((B, d)) if need_z else None)
        return res

    rule = build_rule(ctx.Q, s, ctx.horizon)
    reps = np.arange(M)

    spine_dig = child_digests(dig, k - 1, _SPINE_SLOT, reps).reshape(-1)
    spine_xs = np.repeat(xs, M, axis=0)
    spine = _modified_frame(ctx, spine_dig, spine_xs, s, k - 1,
                            need_z, False, record)
    y_mat = spine.y.reshape(B, M)
    y = y_mat.mean(axis=1)
    y_prev = y_mat[:, 0].copy() if need_pair else None
    z = z_prev = None
    if need_z:
        z_mat = spine.z.reshape(B, M, d)
        if ctx.cfg.strict_printed_form:
            tau = ctx.horizon - s
            assert tau > SINGULARITY_FLOOR
            wt = normal_block(dig, ctx.Q * M * d, M * d).reshape(B, M, d)
            wt *= math.sqrt(tau)
            ctx.counters.gaussian_draws += B * M
            z = (z_mat * wt).mean(axis=1) / tau
        else:
            z = z_mat.mean(axis=1)
        if need_pair:
            z_prev = z_mat[:, 0].copy()

    zero_z = np.zeros((B * M, d))
    for j in range(ctx.Q):
        t_j = float(rule.nodes[j])
        w_j = float(rule.weights[j])
        dt = t_j - s
        assert dt > SINGULARITY_FLOOR
        wv = normal_block(dig, j * M * d, M * d).reshape(B, M, d)
        wv *= math.sqrt(dt)
        ctx.counters.gaussian_draws += B * M
        pts = (xs[:, None, :] + wv).reshape(B * M, d)
        pt_dig = child_digests(dig, k - 1, _POINT_SLOT + j, reps).reshape(-1)

        if k == 2:
            # the subtrahend argument is the known depth-0 value
            sub = _modified_frame(ctx, pt_dig, pts, t_j, 1,
                                  ctx.uses_z, False, record)
            ya, za = sub.y, sub.z
            yb, zb = np.zeros(B * M), None
        elif ctx.cfg.cache:
            sub = _modified_frame(ctx, pt_dig, pts, t_j, k - 1,
                                  ctx.uses_z, True, record)
            ya, za, yb, zb = sub.y, sub.z, sub.y_prev, sub.z_prev
            ctx.counters.cache_hits += B * M
        else:
            # cache off: run the identical traversal a second time and read
            # the subtrahend out of the replay; values match bit for bit
            first = _modified_frame(ctx, pt_dig, pts, t_j, k - 1,
                                    ctx.uses_z, False, record)
            replay = _modified_frame(ctx, pt_dig, pts, t_j, k - 1,
                                     ctx.uses_z, True, False)
            ya, za = first.y, first.z
            yb, zb = replay.y_prev, replay.z_prev

        fa = np.asarray(ctx.problem.generator(
            t_j, ya, za if za is not None else zero_z), dtype=np.float64)
        fb = np.asarray(ctx.problem.generator(
            t_j, yb, zb if zb is not None else zero_z), dtype=np.float64)
        ctx.counters.generator_evals += 2 * B * M
        delta = fa - fb
        if record:
            ctx.diff += _group_sum(ctx, np.abs((w_j / M) * delta))
        dmat = delta.reshape(B, M)
        y = y + w_j * dmat.mean(axis=1)
        if need_z:
            z = z + (w_j / dt) * (dmat[:, :, None] * wv).mean(axis=1)
    return _FrameResult(y, z, y_prev, z_prev)


def _original_frame(ctx: _Ctx, dig: np.ndarray, xs: np.ndarray, s: float,
                    n: int, need_z: bool, record: bool) -> _FrameResult:
    """Original-scheme frame at depth n for a batch of rows.

    Stream layout per key: counters [0, M^n d) hold the terminal
    increments; for level l in 1..n-1 and node j the displacing increments
    occupy a fixed block of M^(n-l) d values; the level-0 kernel increments
    (M^n d per node, drawn only for z estimates) come last.  Children: the
    minuend recursion at (level l, node j, sample i) uses slot 1+2j, the
    independent subtrahend recursion uses slot 2+2j.
    """
    B = dig.size
    M, d = ctx.M, ctx.d
    if n == 0:
        return _zeros_result(B, d, need_z)
    if n == 1:
        return _leaf_frame(ctx, dig, xs, s, need_z)

    rule = build_rule(ctx.Q, s, ctx.horizon)
    tau = ctx.horizon - s
    assert tau > SINGULARITY_FLOOR
    m_top = M ** n

    acc = np.zeros(B)
    accz = np.zeros((B, d)) if need_z else None
    phi0 = None
    if need_z:
        phi0 = np.asarray(ctx.problem.terminal(xs), dtype=np.float64)
        ctx.counters.terminal_evals += B
    rchunk = max(1, _CHUNK_VALUES // (B * d))
    sq = math.sqrt(tau)
    for r0 in range(0, m_top, rchunk):
        cnt = min(rchunk, m_top - r0)
        w = normal_block(dig, r0 * d, cnt * d).reshape(B, cnt, d) * sq
        phi = ctx.problem.terminal(xs[:, None, :] + w)
        acc += phi.sum(axis=1)
        if need_z:
            accz += ((phi - phi0[:, None])[:, :, None] * w).sum(axis=1)
    ctx.counters.terminal_evals += B * m_top
    ctx.counters.gaussian_draws += B * m_top
    y = acc / m_top
    z = accz / (m_top * tau) if need_z else None

    # fixed counter offsets: terminal block, then level blocks, then kernels
    level_base = {}
    off = m_top * d
    for l in range(1, n):
        level_base[l] = off
        off += ctx.Q * (M ** (n - l)) * d
    kernel_base = off

    zero_y = np.zeros(B)
    zero_zB = np.zeros((B, d))
    for j in range(ctx.Q):
        t_j = float(rule.nodes[j])
        w_j = float(rule.weights[j])
        dt = t_j - s
        assert dt > SINGULARITY_FLOOR
        f0 = np.asarray(ctx.problem.generator(t_j, zero_y, zero_zB),
                        dtype=np.float64)
        ctx.counters.generator_evals += B
        y = y + w_j * f0
        if need_z:
            ksum = np.zeros((B, d))
            koff = kernel_base + j * m_top * d
            for r0 in range(0, m_top, rchunk):
                cnt = min(rchunk, m_top - r0)
                wk = normal_block(dig, koff + r0 * d, cnt * d).reshape(B, cnt, d)
                ksum += wk.sum(axis=1)
            ctx.counters.gaussian_draws += B * m_top
            z = z + (w_j / dt) * f0[:, None] * (ksum * math.sqrt(dt) / m_top)

    for l in range(1, n):
        m_l = M ** (n - l)
        reps = np.arange(m_l)
        for j in range(ctx.Q):
            t_j = float(rule.nodes[j])
            w_j = float(rule.weights[j])
            dt = t_j - s
            assert dt > SINGULARITY_FLOOR
            wv = normal_block(dig, level_base[l] + j * m_l * d,
                              m_l * d).reshape(B, m_l, d)
            wv *= math.sqrt(dt)
            ctx.counters.gaussian_draws += B * m_l
            pts = (xs[:, None, :] + wv).reshape(B * m_l, d)
            dig_a = child_digests(dig, l, _MINUEND_SLOT + 2 * j, reps).reshape(-1)
            sub_a = _original_frame(ctx, dig_a, pts, t_j, l, ctx.uses_z, record)
            if l >= 2:
                dig_b = child_digests(dig, l, _SUBTRAHEND_SLOT + 2 * j,
                                      reps).reshape(-1)
                sub_b = _original_frame(ctx, dig_b, pts, t_j, l - 1,
                                        ctx.uses_z, record)
            else:
                sub_b = _zeros_result(B * m_l, d, ctx.uses_z)
            zero_zm = np.zeros((B * m_l, d))
            fa = np.asarray(ctx.problem.generator(
                t_j, sub_a.y, sub_a.z if sub_a.z is not None else zero_zm),
                dtype=np.float64)
            fb = np.asarray(ctx.problem.generator(
                t_j, sub_b.y, sub_b.z if sub_b.z is not None else zero_zm),
                dtype=np.float64)
            ctx.counters.generator_evals += 2 * B * m_l
            delta = fa - fb
            if record:
                ctx.diff += _group_sum(ctx, np.abs((w_j / m_l) * delta))
            dmat = delta.reshape(B, m_l)
            y = y + w_j * dmat.mean(axis=1)
            if need_z:
                z = z + (w_j / dt) * (dmat[:, :, None] * wv).mean(axis=1)
    return _FrameResult(y, z, None, None)


def _prepare_point(problem: BsdeProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = np.full(problem.dim, float(x))
    if x.shape != (problem.dim,):
        raise ValueError(f"x must be scalar or shape ({problem.dim},), got {x.shape}")
    return x


def _check_time(problem: BsdeProblem, t: float) -> float:
    t = float(t)
    if not 0.0 <= t < problem.horizon:
        raise InvalidTimeError(
            f"t must lie in [0, {problem.horizon}), got {t}")
    return t


def _root_digests(cfg: MlpConfig, key: Optional[StreamKey]) -> np.ndarray:
    root = key if key is not None else StreamKey.from_seed(cfg.seed)
    return np.array([root.digest], dtype=np.uint64)


def run_batch(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
              digests: np.ndarray, record_diff: bool = True):
    """Evaluate one estimator per digest row; the workhorse behind the
    public entry points.  Returns (y, z or None, counters, diff) where y
    and diff have one entry per row and counters are totals over all rows.
    """
    t = _check_time(problem, t)
    xv = _prepare_point(problem, x)
    B = digests.size
    ctx = _Ctx(problem, cfg, groups=B)
    need_z = cfg.estimate_z or ctx.uses_z
    xs = np.tile(xv, (B, 1))
    if cfg.depth == 0:
        res = _zeros_result(B, ctx.d, need_z)
    elif cfg.variant == "modified":
        res = _modified_frame(ctx, digests, xs, t, cfg.depth,
                              need_z, False, record_diff)
    else:
        res = _original_frame(ctx, digests, xs, t, cfg.depth,
                              need_z, record_diff)
    z = res.z if cfg.estimate_z else None
    return res.y, z, ctx.counters, ctx.diff


def _single(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
            key: Optional[StreamKey]) -> Estimate:
    y, z, counters, diff = run_batch(problem, cfg, t, x,
                                     _root_digests(cfg, key))
    zv = z[0].copy() if z is not None else None
    return Estimate(y=float(y[0]), z=zv, cost=counters,
                    diff_accum=float(diff[0]))


def estimate_modified(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
                      key: Optional[StreamKey] = None) -> Estimate:
    """Modified-scheme estimate at (t, x); key overrides seed derivation."""
    if cfg.variant != "modified":
        cfg = MlpConfig(**{**cfg.__dict__, "variant": "modified"})
    return _single(problem, cfg, t, x, key)


def estimate_original(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
                      key: Optional[StreamKey] = None) -> Estimate:
    """Original-scheme estimate at (t, x); key overrides seed derivation."""
    if cfg.variant != "original":
        cfg = MlpConfig(**{**cfg.__dict__, "variant": "original"})
    return _single(problem, cfg, t, x, key)


def estimate(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
             key: Optional[StreamKey] = None) -> Estimate:
    if cfg.variant == "modified":
        return estimate_modified(problem, cfg, t, x, key)
    return estimate_original(problem, cfg, t, x, key)


def paired_recursion(problem: BsdeProblem, cfg: MlpConfig, t: float, x,
                     depth: Optional[int] = None,
                     key: Optional[StreamKey] = None) -> PairEstimate:
    """Joint (y_k, y_{k-1}) at (t, x) from a single modified-scheme tree.

    The second component is the first spine copy's estimate; replaying the
    corresponding child key through a full depth-(k-1) recursion reproduces
    it exactly.  Defined for the modified scheme; depth defaults to
    cfg.depth and must be >= 1.
    """
    k = cfg.depth if depth is None else depth
    if k < 1 or k > MAX_DEPTH:
        raise ValueError(f"paired depth must lie in 1..{MAX_DEPTH}, got {k}")
    t = _check_time(problem, t)
    xv = _prepare_point(problem, x)
    ctx = _Ctx(problem, cfg, groups=1)
    need_z = cfg.estimate_z or ctx.uses_z
    dig = _root_digests(cfg, key)
    res = _modified_frame(ctx, dig, xv[None, :], t, k, need_z, True, True)
    want_z = cfg.estimate_z
    return PairEstimate(
        y=float(res.y[0]),
        y_prev=float(res.y_prev[0]),
        z=res.z[0].copy() if (want_z and res.z is not None) else None,
        z_prev=res.z_prev[0].copy() if (want_z and res.z_prev is not None) else None,
        cost=ctx.counters,
        diff_accum=float(ctx.diff[0]),
    )
