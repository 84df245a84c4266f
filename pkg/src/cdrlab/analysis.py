"""Jitter measurement, offset sweeps, lock detection, and the Markov-chain
oracle for the strictly-1-bit-ISI eye model.

The oracle and the time-domain loop are independent routes to the same
recovered-clock statistics: the oracle quantizes the falling-edge position
on a grid, assembles the exact per-slot transition probabilities from the
four-trace geometry (each transition trace occurs with probability 1/8,
non-transitions hold), and solves the stationary edge-position
distribution by power iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .channel import ChannelConfig, apply_channel
from .errors import ConfigError, InsufficientDataError, LockError, NumericalError, SimulationFault
from .eyemodel import OneBitIsiModel, synthesize_waveform
from .loop import LoopConfig, SimTrace, run_cdr
from .stimulus import generate_bits, nrz_modulate

LOCK_WINDOW_EDGES = 1000
LOCK_PKPK_UI = 0.25
LOCK_SLOPE_UI_PER_EDGE = 5e-5


def _sliding_ls_slope(c: np.ndarray, w: int) -> np.ndarray:
    """Least-squares slope of c over every length-w sliding window."""
    n = c.size
    idx = np.arange(n, dtype=np.float64)
    cs = np.concatenate(([0.0], np.cumsum(c)))
    cis = np.concatenate(([0.0], np.cumsum(idx * c)))
    s = np.arange(n - w + 1, dtype=np.float64)
    sum_c = cs[w:] - cs[:-w]
    sum_ic = (cis[w:] - cis[:-w]) - s * sum_c
    denom = w * (w * w - 1.0) / 12.0
    return (sum_ic - 0.5 * (w - 1) * sum_c) / denom


def lock_detect(trace: SimTrace, ui: float) -> float | None:
    """First time after which every trailing 1000-edge window is quiet.

    A window qualifies when its cumulative edge-phase deviation has
    peak-to-peak below 25% UI and a least-squares drift slope below
    tolerance (bounded dither averages out; residual frequency error does
    not).  Returns the window-start edge time, or None if never locked.
    """
    t = trace.falling_edges
    n = t.size
    if n < LOCK_WINDOW_EDGES + 1:
        return None
    c = t - t[0] - np.arange(n) * ui
    w = LOCK_WINDOW_EDGES
    hi = maximum_filter1d(c, size=w, origin=-(w // 2))[: n - w + 1]
    lo = minimum_filter1d(c, size=w, origin=-(w // 2))[: n - w + 1]
    pkpk_ok = (hi - lo) < LOCK_PKPK_UI * ui
    slope_ok = np.abs(_sliding_ls_slope(c, w)) < LOCK_SLOPE_UI_PER_EDGE * ui
    ok = pkpk_ok & slope_ok
    if not ok.any():
        return None
    return float(t[int(np.argmax(ok))])


def lock_index(trace: SimTrace, ui: float) -> int | None:
    t_lock = lock_detect(trace, ui)
    if t_lock is None:
        return None
    return int(np.searchsorted(trace.falling_edges, t_lock))


@dataclass(slots=True, frozen=True)
class JitterReport:
    """Distributional statistics of post-lock falling-edge phase."""

    pk_pk_ui: float
    pk_pk_quantile_ui: float        # 0.1%..99.9% range, robustness companion
    mean_edge_phase: float          # UI fraction in [0, 1)
    hist_counts: np.ndarray
    hist_edges: np.ndarray          # UI fraction, centered on the mean phase
    n_edges_measured: int
    warmup_discarded: int

    @property
    def pk_pk_pct_ui(self) -> float:
        return 100.0 * self.pk_pk_ui


def _centered_phases(times: np.ndarray, ui: float) -> tuple[np.ndarray, float]:
    phase = np.mod(times, ui) / ui
    z = np.exp(2j * np.pi * phase).mean()
    center = float(np.angle(z) / (2.0 * np.pi) % 1.0)
    dev = np.mod(phase - center + 0.5, 1.0) - 0.5
    return dev, center


def measure_jitter(trace: SimTrace, ui: float, min_edges: int = 10_000) -> JitterReport:
    """Peak-to-peak (max minus min) post-lock falling-edge phase, in UI.

    The warmup discard is the larger of the pre-lock region and the first
    20% of edges.  Raises LockError (with the drift diagnostic) if the
    loop never locked.
    """
    idx = lock_index(trace, ui)
    if idx is None:
        raise LockError("loop did not achieve lock", diagnostic=trace.drift_diagnostic)
    n = trace.falling_edges.size
    start = max(idx, int(np.ceil(0.2 * n)))
    post = trace.falling_edges[start:]
    if post.size < min_edges:
        raise InsufficientDataError(
            f"need >= {min_edges} post-lock edges, got {post.size}"
        )
    dev, center = _centered_phases(post, ui)
    counts, edges = np.histogram(dev, bins=128, range=(-0.5, 0.5))
    q_lo, q_hi = np.quantile(dev, [0.001, 0.999])
    return JitterReport(
        pk_pk_ui=float(dev.max() - dev.min()),
        pk_pk_quantile_ui=float(q_hi - q_lo),
        mean_edge_phase=center,
        hist_counts=counts,
        hist_edges=edges + center,
        n_edges_measured=int(post.size),
        warmup_discarded=int(start),
    )


@dataclass(slots=True, frozen=True)
class SweepCurve:
    """Peak-to-peak jitter vs static sampler offset."""

    v_off: np.ndarray          # volts, strictly increasing
    pk_pk_ui: np.ndarray       # NaN where the point failed to lock
    locked: np.ndarray         # bool per point
    preset_id: str
    loop_id: str

    def __post_init__(self):
        if np.any(np.diff(self.v_off) <= 0):
            raise ConfigError("sweep offsets must be strictly increasing")

    def global_minimum(self) -> float:
        ok = self.locked & np.isfinite(self.pk_pk_ui)
        if not ok.any():
            raise InsufficientDataError("no locked sweep points")
        j = np.flatnonzero(ok)[np.argmin(self.pk_pk_ui[ok])]
        return float(self.v_off[j])

    def local_minima(self) -> np.ndarray:
        """Offsets of interior local minima (plateau-tolerant)."""
        y = np.where(self.locked, self.pk_pk_ui, np.inf)
        mins = []
        for j in range(1, y.size - 1):
            if not np.isfinite(y[j]):
                continue
            if y[j] <= y[j - 1] and y[j] <= y[j + 1] and (y[j] < y[j - 1] or y[j] < y[j + 1]):
                mins.append(self.v_off[j])
        return np.asarray(mins)


def offset_sweep(
    loop_cfg: LoopConfig,
    channel_cfg: ChannelConfig,
    offsets,
    n_bits: int,
    ui: float,
    samples_per_ui: int = 64,
    amplitude: float = 0.2,
    master_seed: int = 2024,
    source_kind: str = "uniform",
    min_edges: int = 10_000,
) -> SweepCurve:
    """One closed-loop run + jitter measurement per offset point.

    Every point draws its data and metastability seeds from an independent
    child of the master seed, so the sweep is reproducible point-by-point.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    children = np.random.SeedSequence(master_seed).spawn(offsets.size)
    pk = np.full(offsets.size, np.nan)
    locked = np.zeros(offsets.size, dtype=bool)
    for j, v_off in enumerate(offsets):
        data_seed, meta_seed = (int(s) for s in children[j].generate_state(2))
        bits = generate_bits(source_kind, n_bits, data_seed)
        wave = apply_channel(nrz_modulate(bits, ui, samples_per_ui, amplitude), channel_cfg)
        cfg = replace(loop_cfg, v_off=float(v_off), metastability_seed=meta_seed)
        try:
            trace = run_cdr(cfg, wave, ui=ui)
            report = measure_jitter(trace, ui, min_edges=min_edges)
        except (LockError, SimulationFault, InsufficientDataError):
            continue
        pk[j] = report.pk_pk_ui
        locked[j] = True
    return SweepCurve(
        v_off=offsets,
        pk_pk_ui=pk,
        locked=locked,
        preset_id=channel_cfg.preset or "custom",
        loop_id=f"f0={loop_cfg.f0:.4g}",
    )


@dataclass(slots=True, frozen=True)
class OracleResult:
    """Stationary edge-position statistics from the quantized-walk model."""

    positions_ui: np.ndarray     # grid-cell centers, UI fraction
    stationary: np.ndarray       # probabilities, sum 1
    drift_steps: np.ndarray      # expected signed move per slot, in steps
    step_ui: float               # bang-bang move per decision, UI fraction
    cell_ui: float               # grid resolution, UI fraction
    support_lo_ui: float
    support_hi_ui: float
    all_traces_cross: bool
    residual: float
    n_iterations: int

    @property
    def support_width_ui(self) -> float:
        """Full width of the stationary mode at a quarter of its peak."""
        return self.support_hi_ui - self.support_lo_ui

    def expected_range_ui(self, n_events: int) -> float:
        """Expected max-minus-min of edge phase over ``n_events`` slots.

        Quantile-range estimate: the interval whose tails each hold
        0.5/n_events of stationary mass.
        """
        if n_events < 1:
            raise ConfigError("n_events must be >= 1")
        alpha = 0.5 / n_events
        cdf = np.cumsum(self.stationary)
        lo = int(np.searchsorted(cdf, alpha))
        hi = int(np.searchsorted(cdf, 1.0 - alpha))
        hi = min(hi, self.positions_ui.size - 1)
        return float(self.positions_ui[hi] - self.positions_ui[lo])


def _trace_votes(model: OneBitIsiModel, threshold: float, positions: np.ndarray):
    """Per-position delay/advance vote counts (out of 8) for the 4 traces."""
    n_delay = np.zeros(positions.size)
    n_adv = np.zeros(positions.size)
    all_cross = True
    for kind, tr in model.traces.items():
        t_c = tr.crossing_time(threshold)
        if t_c is None:
            all_cross = False
            above = min(tr.v_start, tr.v_end) > threshold
            # b_m constant: equals the post-transition bit when the trace sits
            # entirely on that bit's side of the threshold.
            matches_cur = above == kind.rising
            if matches_cur:
                n_adv += 1.0
            else:
                n_delay += 1.0
        else:
            n_delay += positions < t_c
            n_adv += positions > t_c
    return n_delay, n_adv, all_cross


def markov_oracle(
    model: OneBitIsiModel,
    threshold: float,
    step: float,
    grid: int = 1024,
    tol: float = 1e-12,
    max_iterations: int = 500_000,
) -> OracleResult:
    """Stationary falling-edge distribution of the quantized bang-bang walk.

    Each bit slot moves the edge one ``step`` toward the crossing of the
    slot's transition trace (probability 1/8 each; non-transitions hold).
    Edges that would leave the grid are held at the boundary, where every
    trace pushes back inward.
    """
    if grid < 256:
        raise ConfigError("oracle grid must have at least 256 cells")
    if step <= 0.0:
        raise ConfigError("step must be positive")
    ui = model.ui
    cell = ui / grid
    move = max(1, int(round(step / cell)))
    positions = (np.arange(grid) + 0.5) * cell

    n_delay, n_adv, all_cross = _trace_votes(model, threshold, positions)
    p_delay = n_delay / 8.0
    p_adv = n_adv / 8.0
    p_stay = 1.0 - p_delay - p_adv

    p = np.full(grid, 1.0 / grid)
    nxt = np.empty_like(p)
    for it in range(1, max_iterations + 1):
        nxt[:] = p * p_stay
        fwd = p * p_delay
        nxt[move:] += fwd[:-move]
        nxt[-1] += fwd[-move:].sum()
        back = p * p_adv
        nxt[:-move] += back[move:]
        nxt[0] += back[:move].sum()
        residual = float(np.abs(nxt - p).sum())
        p, nxt = nxt, p
        if residual < tol:
            break
    else:
        raise NumericalError(
            f"oracle power iteration did not reach {tol:g} in {max_iterations} steps",
            residual=residual,
        )

    peak = p.max()
    above = np.flatnonzero(p >= 0.25 * peak)
    lo, hi = int(above[0]), int(above[-1])
    return OracleResult(
        positions_ui=positions / ui,
        stationary=p,
        drift_steps=(n_delay - n_adv) / 8.0,
        step_ui=move * cell / ui,
        cell_ui=cell / ui,
        support_lo_ui=float(positions[lo] / ui),
        support_hi_ui=float(positions[hi] / ui),
        all_traces_cross=all_cross,
        residual=residual,
        n_iterations=it,
    )


@dataclass(slots=True, frozen=True)
class OracleComparison:
    """Side-by-side recovered-clock jitter: quantized walk vs full loop.

    ``oracle_pk_pk_ui`` is the stationary-mode support width plus one
    bang-bang step of dither on each side.  (The i.i.d.-slot quantile
    range over-predicts excursions at the pinned thresholds because the
    bit process cannot repeat the extreme-vote patterns back-to-back.)
    """

    threshold: float
    oracle_pk_pk_ui: float
    sim_pk_pk_ui: float
    ratio: float                  # sim / oracle
    support_width_ui: float
    regime_ok: bool               # proportional path dominant (walk model valid)
    integral_step_ratio: float
    all_traces_cross: bool
    sim_locked: bool
    sim_saw_transitions: bool


def oracle_vs_sim(
    model: OneBitIsiModel,
    threshold: float,
    loop_cfg: LoopConfig,
    n_bits: int = 30_000,
    samples_per_ui: int = 64,
    seed: int = 77,
    grid: int = 1024,
) -> OracleComparison:
    """Run the loop on a waveform synthesized from the trace model and
    compare its measured pk-pk against the oracle's same-length range.

    The static offset is set to ``-threshold`` so the effective
    edge-sampler threshold equals ``threshold``.
    """
    ui = model.ui
    step_s = loop_cfg.bang_bang_step_ui * ui
    oracle = markov_oracle(model, threshold, step=step_s, grid=grid)

    # The walk abstraction holds only while the integral path's accumulated
    # phase wander stays small over the measurement window: the per-event
    # frequency kick is kvco*icp*(ui/2)/C, and random-walked over ~n_bits
    # events its integrated phase grows like n^(3/2).
    coef = loop_cfg.kvco * loop_cfg.icp * (ui / 2.0) / loop_cfg.c_filter * ui
    wander_ui = 0.4 * coef * (n_bits / 2.0) ** 1.5
    integral_ratio = wander_ui / max(oracle.support_width_ui, oracle.step_ui)
    regime_ok = integral_ratio < 0.25

    ss = np.random.SeedSequence(seed)
    data_seed, meta_seed = (int(s) for s in ss.generate_state(2))
    bits = generate_bits("uniform", n_bits, data_seed)
    wave = synthesize_waveform(model, bits, samples_per_ui)
    cfg = replace(loop_cfg, v_off=-threshold, metastability_seed=meta_seed)

    sim_locked = True
    saw_transitions = False
    sim_pkpk = np.nan
    try:
        trace = run_cdr(cfg, wave, ui=ui)
        saw_transitions = trace.saw_transitions
        report = measure_jitter(trace, ui, min_edges=min(10_000, n_bits // 2))
        sim_pkpk = report.pk_pk_ui
    except (LockError, SimulationFault):
        sim_locked = False

    oracle_pkpk = oracle.support_width_ui + 2.0 * oracle.step_ui
    ratio = float(sim_pkpk / oracle_pkpk) if oracle_pkpk > 0 else np.inf
    return OracleComparison(
        threshold=threshold,
        oracle_pk_pk_ui=oracle_pkpk,
        sim_pk_pk_ui=float(sim_pkpk),
        ratio=ratio,
        support_width_ui=oracle.support_width_ui,
        regime_ok=regime_ok,
        integral_step_ratio=float(integral_ratio),
        all_traces_cross=oracle.all_traces_cross,
        sim_locked=sim_locked,
        sim_saw_transitions=saw_transitions,
    )
