"""Closed-loop bang-bang CDR: samplers, phase/threshold detectors, charge
pump, RC loop filter, VCO, and the slow threshold-feedback integrator.

Sign conventions
----------------
* ``ClockEarly`` means the clock edge arrived before the data transition;
  the pump sinks current, the VCO slows, edges move later.  ``ClockLate``
  sources current and pulls edges earlier.
* A static offset ``v_off`` added at the edge sampler's data input shifts
  its switching threshold to ``-v_off``.  The tracking feedback enters the
  summing node with the opposite sign, so ``v_th_fb`` reads directly in
  threshold volts: the effective edge-sampler threshold is
  ``v_th_fb - v_off``.  An ``Increase`` action therefore raises the
  effective threshold, which is what closes the tracking loop negatively.
* Only the edge sampler's threshold is shifted; center samplers slice at
  0 V.

The comparator resolves inputs within +/-``META_BAND`` of its threshold by
a seeded fair coin (metastability model).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from . import _kernel
from .errors import ConfigError, InsufficientDataError, SimulationFault
from .stimulus import Waveform

META_BAND = 1e-4  # volts; +/- band around the threshold that resolves by coin


class PdDecision(IntEnum):
    """Ternary phase-detector output; the value is the pump-current sign."""

    CLOCK_EARLY = -1
    HOLD = 0
    CLOCK_LATE = 1


class ThresholdAction(IntEnum):
    """Ternary threshold-detector output; the value is the integrator sign."""

    DECREASE = -1
    NONE = 0
    INCREASE = 1


class PhaseSamples(NamedTuple):
    """Sampler history: two center samples, the edge sample between them,
    and the current center sample."""

    b_prev2: int
    b_prev1: int
    b_mid: int
    b_cur: int


@dataclass(slots=True, frozen=True)
class LoopConfig:
    """Loop component values plus experiment knobs."""

    f0: float                     # VCO free-running frequency, Hz
    kvco: float                   # VCO gain, Hz/V
    icp: float                    # charge-pump current, A
    r_filter: float               # loop-filter resistor, ohm
    c_filter: float               # loop-filter capacitor, F
    v_off: float = 0.0            # static offset injected at the edge sampler, V
    vth_gain: float = 0.0         # threshold integrator step per action, V
    vth_enabled: bool = False
    metastability_seed: int = 1
    vth_clamp: float = 0.25       # integrator rail, V (~eye amplitude)

    def __post_init__(self):
        for name in ("f0", "kvco", "icp", "r_filter", "c_filter"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"LoopConfig.{name} must be positive")
        if self.vth_gain < 0.0:
            raise ConfigError("LoopConfig.vth_gain must be >= 0")

    @classmethod
    def default(cls, bitrate: float, **overrides) -> "LoopConfig":
        """Committed desk-scale loop: well damped, ~0.2% UI bang-bang step."""
        base = dict(
            f0=bitrate,
            kvco=0.02 * bitrate,      # 20 MHz/V at 1 Gb/s
            icp=100e-6,
            r_filter=2e3,
            c_filter=200e-12,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def oracle_regime(cls, bitrate: float, **overrides) -> "LoopConfig":
        """Proportional-dominant loop for random-walk comparisons.

        The very large capacitor keeps the integral path's accumulated
        phase wander far below the transition-trace geometry over
        measurement-length windows, and the 0.1% UI step keeps the
        bang-bang dither well inside it.
        """
        base = dict(
            f0=bitrate,
            kvco=0.01 * bitrate,
            icp=100e-6,
            r_filter=2e3,
            c_filter=1e-6,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def bang_bang_step_ui(self) -> float:
        """Phase move per decision from the proportional path, in UI."""
        return self.kvco * self.icp * self.r_filter / (2.0 * self.f0)


@dataclass(slots=True)
class CdrState:
    """Loop state threaded through the step-wise operations."""

    vco_phase: float = 0.0
    v_cap: float = 0.0      # capacitor voltage (integral part)
    v_c: float = 0.0        # control voltage incl. resistor term while pumping
    v_th_fb: float = 0.0
    history: PhaseSamples = PhaseSamples(0, 0, 0, 0)
    time: float = 0.0


class ComparatorRng:
    """Deterministic coin stream for metastable comparator resolutions."""

    def __init__(self, seed: int):
        self._state = np.empty(1, dtype=np.uint64)
        self._state[0] = _kernel.rng_seed_state(seed)

    def coin(self) -> int:
        return int(_kernel.rng_next(self._state) >> np.uint64(63))


def sample_comparator(v: float, threshold: float, rng: ComparatorRng) -> int:
    """Slice ``v`` against ``threshold``; coin-flip inside the metastable band."""
    d = v - threshold
    if d > META_BAND:
        return 1
    if d < -META_BAND:
        return 0
    return rng.coin()


def effective_threshold(v_off: float, v_th_fb: float = 0.0) -> float:
    """Edge-sampler switching threshold seen by the waveform.

    The static offset is added at the sampler's data input (threshold
    ``-v_off``); the tracking feedback is applied subtractively at the
    summer so it adds directly in threshold units.
    """
    return v_th_fb - v_off


def alexander_decide(a: int, b: int, c: int) -> PdDecision:
    """Three-sample bang-bang decision (center, edge, center)."""
    return PdDecision(_kernel.alexander_sign(a, b, c))


def threshold_decide(s: PhaseSamples) -> ThresholdAction:
    """Threshold-detector logic.

    Raise when ``not b[-2] and b_m and (b[-1] xor b[0])``, lower when
    ``not b[-2] and not b_m and (b[-1] xor b[0])``; mutually exclusive by
    construction.
    """
    return ThresholdAction(_kernel.threshold_sign(*s))


def _build_action_table() -> dict:
    table = {}
    for b2 in (0, 1):
        for b1 in (0, 1):
            for bm in (0, 1):
                for b0 in (0, 1):
                    table[(b2, b1, bm, b0)] = ThresholdAction.NONE
    # Actionable rows: settled start (b[-2]=0) around a transition; the edge
    # sample tells which side of the target level the threshold sits on.
    table[(0, 0, 0, 1)] = ThresholdAction.DECREASE
    table[(0, 0, 1, 1)] = ThresholdAction.INCREASE
    table[(0, 1, 0, 0)] = ThresholdAction.DECREASE
    table[(0, 1, 1, 0)] = ThresholdAction.INCREASE
    return table


#: 16-row action lookup; rows with no decision (or a decision this
#: implementation does not use, i.e. unsettled-start transitions) map to NONE.
THRESHOLD_ACTION_TABLE = _build_action_table()


def threshold_decide_table(s: PhaseSamples) -> ThresholdAction:
    """Table-lookup twin of :func:`threshold_decide`."""
    return THRESHOLD_ACTION_TABLE[tuple(s)]


def charge_pump_and_filter(
    cfg: LoopConfig, state: CdrState, decision: PdDecision, dt: float
) -> CdrState:
    """Drive the RC filter with the pump current implied by ``decision``.

    The capacitor integrates ``i/C``; the control voltage adds the
    instantaneous ``i*R`` term only while the pump is asserted.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    i_pump = int(decision) * cfg.icp
    v_cap = state.v_cap + i_pump * dt / cfg.c_filter
    return replace(state, v_cap=v_cap, v_c=v_cap + i_pump * cfg.r_filter,
                   time=state.time + dt)


def vco_advance(cfg: LoopConfig, state: CdrState, v_c: float, dt: float):
    """Advance the VCO phase over ``dt`` at control voltage ``v_c``.

    Returns ``(new_state, edges)`` where edges is a list of
    ``(time, 'rising'|'falling')`` for phase crossings of 0/pi (mod 2*pi)
    inside ``(t, t+dt]``, linearly interpolated.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    freq = cfg.f0 + cfg.kvco * v_c
    if freq <= 0.0:
        raise SimulationFault(f"VCO frequency went non-positive: {freq:.4g} Hz")
    phase = state.vco_phase
    new_phase = phase + 2.0 * np.pi * freq * dt
    edges = []
    m = int(np.floor(phase / np.pi)) + 1
    while m * np.pi <= new_phase:
        frac = (m * np.pi - phase) / (new_phase - phase)
        kind = "rising" if m % 2 == 0 else "falling"
        edges.append((state.time + frac * dt, kind))
        m += 1
    return replace(state, vco_phase=new_phase, time=state.time + dt), edges


def threshold_integrator(cfg: LoopConfig, state: CdrState, action: ThresholdAction) -> CdrState:
    """Accumulate threshold actions into ``v_th_fb`` (clamped at the rails)."""
    if not cfg.vth_enabled:
        raise ConfigError("threshold integrator called with vth_enabled=False")
    v = state.v_th_fb + int(action) * cfg.vth_gain
    v = float(np.clip(v, -cfg.vth_clamp, cfg.vth_clamp))
    return replace(state, v_th_fb=v)


@dataclass(slots=True)
class SimTrace:
    """Full record of one closed-loop run."""

    ui: float
    falling_edges: np.ndarray
    rising_edges: np.ndarray
    recovered_bits: np.ndarray
    ctrl_time: np.ndarray
    v_c: np.ndarray
    v_th_fb: np.ndarray
    edge_sample_ones_fraction: float
    lock_lost: bool
    drift_diagnostic: dict

    @property
    def final_v_th_fb(self) -> float:
        return float(self.v_th_fb[-1]) if self.v_th_fb.size else 0.0

    @property
    def saw_transitions(self) -> bool:
        """False when the edge sampler never toggled (threshold outside eye)."""
        f = self.edge_sample_ones_fraction
        return 0.001 < f < 0.999


def _drift_check(falling: np.ndarray, ui: float) -> tuple[bool, dict]:
    """Crude sustained-drift detector over the trailing half of the run."""
    n = falling.size
    if n < 100:
        return True, {"reason": "too few edges", "n_edges": int(n)}
    tail = falling[n // 2:]
    k = np.arange(tail.size)
    resid = tail - tail[0] - k * ui
    slope = (resid[-1] - resid[0]) / max(tail.size - 1, 1)
    detrended = resid - slope * k
    pkpk = float(detrended.max() - detrended.min())
    lost = pkpk > 0.5 * ui
    return lost, {"tail_pkpk_ui": pkpk / ui, "tail_slope_ui_per_edge": slope / ui}


def run_cdr(
    cfg: LoopConfig,
    data: Waveform,
    ui: float | None = None,
    initial_phase: float = -np.pi / 2.0,
    initial_v_cap: float = 0.0,
    decimation: int | None = None,
    min_ui: int = 10_000,
) -> SimTrace:
    """Simulate the full loop over ``data``.

    At each rising clock edge the center sampler slices at 0 V and the
    phase/threshold decisions are evaluated on the sample history; at each
    falling edge the edge sampler slices at the effective threshold.  The
    analog state advances on the waveform sample grid with clock edges
    refined by phase interpolation.  Deterministic for fixed inputs/seeds.
    """
    ui = 1.0 / cfg.f0 if ui is None else ui
    n_ui = data.duration / ui
    if n_ui < min_ui:
        raise InsufficientDataError(
            f"run_cdr needs at least {min_ui} UI of data, got {n_ui:.0f}"
        )
    samples_per_ui = ui / data.sample_period
    if samples_per_ui < 16:
        raise ConfigError("need at least 16 samples per UI")

    decim = int(round(samples_per_ui)) if decimation is None else int(decimation)
    max_edges = int(2 * n_ui) + 64
    rising = np.empty(max_edges)
    falling = np.empty(max_edges)
    bits = np.empty(max_edges, dtype=np.uint8)
    n_rec = data.samples.size // decim + 2
    rec_t = np.empty(n_rec)
    rec_vc = np.empty(n_rec)
    rec_vth = np.empty(n_rec)

    nr, nf, nrec, n_mid_ones, fault = _kernel.run_loop(
        data.samples, data.sample_period, data.t0,
        cfg.f0, cfg.kvco, cfg.icp, cfg.r_filter, cfg.c_filter,
        cfg.v_off, cfg.vth_gain, 1 if cfg.vth_enabled else 0, cfg.vth_clamp,
        META_BAND, cfg.metastability_seed,
        initial_phase, initial_v_cap,
        decim,
        rising, falling, bits,
        rec_t, rec_vc, rec_vth,
    )
    if fault == _kernel.FAULT_FREQ_NONPOSITIVE:
        raise SimulationFault("VCO frequency went non-positive during the run")
    if fault == _kernel.FAULT_EDGE_OVERFLOW:
        raise SimulationFault("clock ran away: emitted more edges than allocated")

    lock_lost, diag = _drift_check(falling[:nf], ui)
    return SimTrace(
        ui=ui,
        falling_edges=falling[:nf].copy(),
        rising_edges=rising[:nr].copy(),
        recovered_bits=bits[:nr].copy(),
        ctrl_time=rec_t[:nrec].copy(),
        v_c=rec_vc[:nrec].copy(),
        v_th_fb=rec_vth[:nrec].copy(),
        edge_sample_ones_fraction=n_mid_ones / nf if nf else 0.0,
        lock_lost=lock_lost,
        drift_diagnostic=diag,
    )
