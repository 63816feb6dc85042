"""Constant-stepsize SGD for streaming least squares, with tail averaging.

One step on a pair (x, y) is ``w <- w + gamma * (y - w.x) x``.  A run of T
steps visits states w_0, ..., w_T; the tail average over the window [t, T)
is ``(1/(T-t)) * sum_{s=t}^{T-1} w_s``, so w_0 contributes when t = 0 and
the final state w_T never does.

``run_replicates`` advances one process per seed with the update vectorized
across replicates.  Each replicate owns an independent sample stream, drawn
in fixed-size blocks, so a replicate's trajectory depends only on its own
seed: splitting a seed list across calls (or worker processes) reproduces
bit-identical trajectories.  Iterate sums use compensated (Kahan) summation
so long tail averages do not lose precision.

Besides the plain process, two decompositions of the same run are available:
the bias process feeds noiseless labels w*.x through the same covariate
stream, and the variance process starts at w* with labels as drawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionSpec, Moments, SampleStream, estimate_moments, exact_moments
from .errors import (
    DimensionError,
    EmptyWindowError,
    IntractableMomentsError,
    StepSizeError,
)
from .matcore import sym

# Samples buffered per replicate between vectorized sweeps.  The buffer costs
# BLOCK * replicates * d * 8 bytes; the draw pattern is a function of T alone,
# which is what keeps trajectories independent of how seeds are batched.
BLOCK = 512

PROCESSES = ("standard", "bias", "variance")

# Fallback moment estimate for models without closed forms: sample count and
# the fixed internal seed that keeps repeated resolutions identical.
_EST_SAMPLES = 32768
_EST_SEED = 7


@dataclass(frozen=True)
class SgdConfig:
    """Run geometry: stepsize, start point, averaging window start t, horizon T.

    ``record_every`` > 0 asks single-run drivers to record every k-th state.
    """

    gamma: float
    w0: np.ndarray
    t_avg_start: int
    T: int
    record_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "t_avg_start", int(self.t_avg_start))
        object.__setattr__(self, "record_every", int(self.record_every))
        if self.gamma <= 0.0:
            raise StepSizeError(f"stepsize must be positive, got {self.gamma}")
        if self.T < 1:
            raise ValueError(f"horizon T must be at least 1, got {self.T}")
        if not 0 <= self.t_avg_start < self.T:
            raise EmptyWindowError(
                f"averaging window [{self.t_avg_start}, {self.T}) is empty"
            )
        if self.record_every < 0:
            raise ValueError(f"record_every must be nonnegative, got {self.record_every}")
        w = np.array(self.w0, dtype=float)
        if w.ndim != 1:
            raise DimensionError(f"w0 must be a vector, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "w0", w)


@dataclass(frozen=True)
class Trajectory:
    """One replicate's run: recorded states, tail average, final state, and
    any running averages maintained from earlier window starts."""

    steps: np.ndarray
    iterates: np.ndarray
    tail_average: np.ndarray
    final: np.ndarray
    running_averages: tuple[tuple[int, np.ndarray], ...] = field(default=())
    samples_used: int = 0


@dataclass(frozen=True)
class BatchResult:
    """Vectorized outputs of run_replicates; leading axis indexes replicates."""

    tail_averages: np.ndarray
    finals: np.ndarray
    snapshot_steps: tuple[int, ...]
    snapshots: np.ndarray
    running_averages: tuple[tuple[int, np.ndarray], ...]
    samples_per_replicate: int


class _KahanSum:
    """Compensated elementwise sum of equally shaped arrays."""

    def __init__(self, shape):
        self._s = np.zeros(shape)
        self._c = np.zeros(shape)

    def add(self, v):
        y = v - self._c
        t = self._s + y
        self._c = (t - self._s) - y
        self._s = t

    def total(self) -> np.ndarray:
        return self._s.copy()


def check_stepsize(gamma: float, r2: float):
    """Enforce the stability condition gamma < 1 / R^2."""
    if gamma <= 0.0:
        raise StepSizeError(f"stepsize must be positive, got {gamma}")
    if gamma >= 1.0 / r2:
        raise StepSizeError(
            f"gamma={gamma!r} is not below the stability threshold 1/R^2={1.0 / r2!r}"
        )


def resolve_moments(spec: DistributionSpec) -> Moments:
    """Closed-form moments when available, otherwise a Monte-Carlo estimate
    with a fixed internal seed so repeated resolutions agree exactly."""
    try:
        return exact_moments(spec)
    except IntractableMomentsError:
        return estimate_moments(spec, _EST_SAMPLES, _EST_SEED)


def sgd_step(w, x, y: float, gamma: float) -> np.ndarray:
    """Single update w + gamma * (y - w.x) x."""
    wv = np.asarray(w, dtype=float)
    xv = np.asarray(x, dtype=float)
    if wv.shape != xv.shape or wv.ndim != 1:
        raise DimensionError(f"shape mismatch: w {wv.shape} vs x {xv.shape}")
    return wv + gamma * (float(y) - wv @ xv) * xv


def gradient_noise(x, y: float, w_star) -> np.ndarray:
    """Gradient of the half-squared loss at the population minimizer,
    -(y - w*.x) x; zero mean under the model."""
    xv = np.asarray(x, dtype=float)
    wv = np.asarray(w_star, dtype=float)
    if wv.shape != xv.shape or wv.ndim != 1:
        raise DimensionError(f"shape mismatch: w_star {wv.shape} vs x {xv.shape}")
    return -(float(y) - wv @ xv) * xv


def run_replicates(spec: DistributionSpec, config: SgdConfig, seeds, *,
                   process: str = "standard", moments: Moments | None = None,
                   snapshot_steps=(), running_average_starts=()) -> BatchResult:
    """Run one SGD process per seed, vectorized across replicates.

    ``snapshot_steps`` are state indices in [0, T] to capture across all
    replicates; ``running_average_starts`` are extra window starts a < T whose
    averages over [a, T) are maintained alongside the main tail average.
    """
    if process not in PROCESSES:
        raise ValueError(f"unknown process {process!r}; expected one of {PROCESSES}")
    m = resolve_moments(spec) if moments is None else moments
    check_stepsize(config.gamma, m.R2)
    d = spec.d
    if config.w0.shape != (d,):
        raise DimensionError(f"w0 has shape {config.w0.shape}, expected ({d},)")
    seeds = list(seeds)
    n_rep = len(seeds)
    if n_rep < 1:
        raise ValueError("need at least one seed")

    gamma, big_t, t0 = config.gamma, config.T, config.t_avg_start
    w_star = np.asarray(m.w_star, dtype=float)

    snap_steps = sorted({int(s) for s in snapshot_steps})
    if snap_steps and not (0 <= snap_steps[0] and snap_steps[-1] <= big_t):
        raise ValueError(f"snapshot steps must lie in [0, {big_t}]")
    snap_idx = {s: i for i, s in enumerate(snap_steps)}
    snaps = np.empty((len(snap_steps), n_rep, d))

    ra_starts = sorted({int(a) for a in running_average_starts})
    if ra_starts and not (0 <= ra_starts[0] and ra_starts[-1] < big_t):
        raise EmptyWindowError(f"running-average starts must lie in [0, {big_t})")
    ra_set = set(ra_starts)
    prefixes: dict[int, np.ndarray] = {}

    streams = [SampleStream(spec, s) for s in seeds]
    w = np.empty((n_rep, d))
    # The noise-free process is integrated in deviation coordinates: forming
    # y - w.x near the minimizer cancels catastrophically and floors the decay
    # at ulp(w*)^2, while the equivalent update dev -= gamma*(dev.x)x decays
    # geometrically to underflow.  Outputs are shifted back by w*.
    if process == "bias":
        w[:] = config.w0 - w_star
        shift = w_star
    else:
        w[:] = w_star if process == "variance" else config.w0
        shift = np.zeros(d)

    tail = _KahanSum((n_rep, d))
    total = _KahanSum((n_rep, d)) if ra_starts else None

    xb = np.empty((BLOCK, n_rep, d))
    yb = np.empty((BLOCK, n_rep))
    done = 0
    while done < big_t:
        b = min(BLOCK, big_t - done)
        for i, stream in enumerate(streams):
            xi, yi = stream.draw(b)
            xb[:b, i, :] = xi
            yb[:b, i] = yi
        if process == "bias":
            yb[:b] = 0.0
        for j in range(b):
            state = done + j
            if total is not None:
                if state in ra_set:
                    # prefix sum of states [0, state), taken before this state joins
                    prefixes[state] = total.total()
                total.add(w)
            if state >= t0:
                tail.add(w)
            k = snap_idx.get(state)
            if k is not None:
                snaps[k] = w
            x = xb[j]
            r = gamma * (yb[j] - np.einsum("rd,rd->r", w, x))
            w += r[:, None] * x
        done += b
    k = snap_idx.get(big_t)
    if k is not None:
        snaps[k] = w

    running = ()
    if total is not None:
        grand = total.total()
        running = tuple(
            (a, (grand - prefixes[a]) / (big_t - a) + shift) for a in ra_starts
        )
    return BatchResult(
        tail_averages=tail.total() / (big_t - t0) + shift,
        finals=w + shift,
        snapshot_steps=tuple(snap_steps),
        snapshots=snaps + shift,
        running_averages=running,
        samples_per_replicate=big_t,
    )


def _halving_starts(big_t: int) -> tuple[int, ...]:
    starts = set()
    a = big_t // 2
    while a >= 1:
        starts.add(a)
        a //= 2
    return tuple(sorted(starts))


def _single_run(spec, config, seed, process, moments, checkpoint_averages) -> Trajectory:
    snap = range(0, config.T + 1, config.record_every) if config.record_every else ()
    starts = _halving_starts(config.T) if checkpoint_averages else ()
    res = run_replicates(
        spec, config, [seed], process=process, moments=moments,
        snapshot_steps=snap, running_average_starts=starts,
    )
    return Trajectory(
        steps=np.array(res.snapshot_steps, dtype=int),
        iterates=res.snapshots[:, 0, :],
        tail_average=res.tail_averages[0],
        final=res.finals[0],
        running_averages=tuple((a, avg[0]) for a, avg in res.running_averages),
        samples_used=res.samples_per_replicate,
    )


def run_tail_averaged(spec: DistributionSpec, config: SgdConfig, seed, *,
                      moments: Moments | None = None,
                      checkpoint_averages: bool = False) -> Trajectory:
    """One full SGD run.  ``checkpoint_averages`` additionally maintains
    running averages started at T/2, T/4, ... down to 1."""
    return _single_run(spec, config, seed, "standard", moments, checkpoint_averages)


def run_bias_process(spec: DistributionSpec, config: SgdConfig, seed, *,
                     moments: Moments | None = None,
                     checkpoint_averages: bool = False) -> Trajectory:
    """Noise-free half of a run: identical covariate stream, labels w*.x."""
    return _single_run(spec, config, seed, "bias", moments, checkpoint_averages)


def run_variance_process(spec: DistributionSpec, config: SgdConfig, seed, *,
                         moments: Moments | None = None,
                         checkpoint_averages: bool = False) -> Trajectory:
    """Noise-driven half of a run: starts at w*, labels as drawn."""
    return _single_run(spec, config, seed, "variance", moments, checkpoint_averages)


def empirical_covariance(iterates, w_star) -> np.ndarray:
    """Second-moment matrix of deviations from w* across replicates,
    (1/R) sum_r (w_r - w*)(w_r - w*)^T, with no mean centering."""
    ws = np.asarray(iterates, dtype=float)
    if ws.ndim != 2:
        raise DimensionError(f"expected a (replicates, d) array, got shape {ws.shape}")
    if ws.shape[0] < 2:
        raise ValueError(f"need at least 2 replicates, got {ws.shape[0]}")
    dev = ws - np.asarray(w_star, dtype=float)
    return sym(dev.T @ dev / ws.shape[0])
