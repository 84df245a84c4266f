"""Abstract eye model with inter-symbol interference limited to one bit.

The transition region contains exactly four transition trajectories,
distinguished by polarity (rising/falling) and by whether the starting
level had settled (previous two bits equal) or not (previous bit followed
its own transition).  Levels:

* ``R`` -- the vertical mid level (0 V).  Both unsettled traces cross it
  at the same early time; both settled traces cross it at the same late
  time.
* ``Q`` (< 0) -- where the settled-rising and unsettled-falling traces
  intersect; they cross this level simultaneously.
* ``P`` (> 0) -- mirror intersection of unsettled-rising and
  settled-falling traces.

Transition segments are raised-cosine arcs, so crossing times have closed
forms and are strictly monotone in level.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError
from .stimulus import BitStream, Waveform


class TraceKind(Enum):
    RISING_SETTLED = "rising-settled"
    RISING_UNSETTLED = "rising-unsettled"
    FALLING_SETTLED = "falling-settled"
    FALLING_UNSETTLED = "falling-unsettled"

    @property
    def rising(self) -> bool:
        return self in (TraceKind.RISING_SETTLED, TraceKind.RISING_UNSETTLED)

    @property
    def settled_start(self) -> bool:
        return self in (TraceKind.RISING_SETTLED, TraceKind.FALLING_SETTLED)


@dataclass(slots=True, frozen=True)
class NoTransition:
    """Outcome of a bit slot without a data transition."""

    level: float
    from_unsettled: bool


@dataclass(slots=True, frozen=True)
class TransitionTrace:
    """One voltage trajectory across a single UI.

    Holds ``v_start`` until ``t_start``, then a raised-cosine arc of the
    given ``duration``, then holds ``v_end``.  Times are relative to the
    start of the bit slot.
    """

    kind: TraceKind
    v_start: float
    v_end: float
    t_start: float
    duration: float

    def value(self, t):
        s = np.clip((np.asarray(t, dtype=np.float64) - self.t_start) / self.duration, 0.0, 1.0)
        g = 0.5 * (1.0 - np.cos(np.pi * s))
        out = self.v_start + (self.v_end - self.v_start) * g
        return float(out) if np.isscalar(t) else out

    def crossing_time(self, level: float) -> float | None:
        """Time at which the arc crosses ``level``; None if never."""
        g = (level - self.v_start) / (self.v_end - self.v_start)
        if not 0.0 < g < 1.0:
            return None
        s = np.arccos(1.0 - 2.0 * g) / np.pi
        return self.t_start + s * self.duration


def _intersect(a: TransitionTrace, b: TransitionTrace) -> tuple[float, float]:
    """Intersection (time, level) of a rising and a falling trace."""
    lo = min(a.t_start, b.t_start)
    hi = max(a.t_start + a.duration, b.t_start + b.duration)
    f = lambda t: a.value(t) - b.value(t)
    t_x = brentq(f, lo, hi, xtol=1e-18)
    return t_x, a.value(t_x)


@dataclass(slots=True, frozen=True)
class OneBitIsiModel:
    """Four-trace transition-region model with derived level/time geometry."""

    ui: float
    amplitude: float          # settled level magnitude (A)
    unsettled_level: float    # post-transition level magnitude (B), 0 < B < A
    traces: dict
    level_p: float
    level_q: float
    level_r: float
    taus: tuple                # (tau0 .. tau4), strictly increasing

    def __post_init__(self):
        if not 0.0 < self.unsettled_level < self.amplitude:
            raise ConfigError("unsettled level must lie strictly between 0 and the amplitude")
        t = self.taus
        if len(t) != 5 or any(t[i] >= t[i + 1] for i in range(4)):
            raise ConfigError(f"crossing times must be strictly increasing, got {t}")
        if not self.level_q < self.level_r < self.level_p:
            raise ConfigError("levels must order Q < R < P")

    @classmethod
    def from_swing(
        cls,
        ui: float,
        amplitude: float = 0.2,
        unsettled_fraction: float = 0.6,
        transition_start: float = 0.15,
        transition_width: float = 0.6,
    ) -> "OneBitIsiModel":
        """Build all four traces over a shared transition window.

        ``unsettled_fraction`` is the fraction of the full swing a single
        UI reaches (sets the ISI severity); window parameters are in UI.
        """
        a_lv = amplitude
        b_lv = unsettled_fraction * amplitude
        ts = transition_start * ui
        tw = transition_width * ui
        if ts < 0 or ts + tw > ui:
            raise ConfigError("transition window must fit inside one UI")
        mk = lambda kind, v0, v1: TransitionTrace(kind, v0, v1, ts, tw)
        traces = {
            TraceKind.RISING_SETTLED: mk(TraceKind.RISING_SETTLED, -a_lv, b_lv),
            TraceKind.RISING_UNSETTLED: mk(TraceKind.RISING_UNSETTLED, -b_lv, b_lv),
            TraceKind.FALLING_SETTLED: mk(TraceKind.FALLING_SETTLED, a_lv, -b_lv),
            TraceKind.FALLING_UNSETTLED: mk(TraceKind.FALLING_UNSETTLED, b_lv, -b_lv),
        }
        return cls._finish(ui, a_lv, b_lv, traces)

    @classmethod
    def from_crossing_times(
        cls,
        ui: float,
        taus: tuple,
        level_q: float,
        amplitude: float = 0.2,
        unsettled_fraction: float = 0.6,
    ) -> "OneBitIsiModel":
        """Solve per-trace windows so crossings land on the requested times.

        ``taus`` = (tau0..tau4): the unsettled pair crosses the mid level at
        tau1 and the settled pair at tau3; at ``level_q`` the crossings are
        tau0 (rising-unsettled), tau2 (the intersecting pair) and tau4
        (falling-settled).
        """
        a_lv = amplitude
        b_lv = unsettled_fraction * amplitude
        if not -b_lv < level_q < 0.0:
            raise ConfigError("level_q must lie in (-unsettled_level, 0)")
        t0, t1, t2, t3, t4 = taus

        def solve(kind, v0, v1, lv_a, t_a, lv_b, t_b):
            s_of = lambda lv: np.arccos(1.0 - 2.0 * (lv - v0) / (v1 - v0)) / np.pi
            sa, sb = s_of(lv_a), s_of(lv_b)
            dur = (t_b - t_a) / (sb - sa)
            start = t_a - sa * dur
            if dur <= 0 or start < 0 or start + dur > ui:
                raise ConfigError(
                    f"requested crossing times for {kind.value} do not fit in one UI"
                )
            return TransitionTrace(kind, v0, v1, start, dur)

        traces = {
            TraceKind.RISING_UNSETTLED: solve(
                TraceKind.RISING_UNSETTLED, -b_lv, b_lv, 0.0, t1, level_q, t0),
            TraceKind.FALLING_UNSETTLED: solve(
                TraceKind.FALLING_UNSETTLED, b_lv, -b_lv, 0.0, t1, level_q, t2),
            TraceKind.RISING_SETTLED: solve(
                TraceKind.RISING_SETTLED, -a_lv, b_lv, 0.0, t3, level_q, t2),
            TraceKind.FALLING_SETTLED: solve(
                TraceKind.FALLING_SETTLED, a_lv, -b_lv, 0.0, t3, level_q, t4),
        }
        return cls._finish(ui, a_lv, b_lv, traces)

    @classmethod
    def _finish(cls, ui, a_lv, b_lv, traces) -> "OneBitIsiModel":
        _, q = _intersect(traces[TraceKind.RISING_SETTLED], traces[TraceKind.FALLING_UNSETTLED])
        _, p = _intersect(traces[TraceKind.RISING_UNSETTLED], traces[TraceKind.FALLING_SETTLED])
        tau0 = traces[TraceKind.RISING_UNSETTLED].crossing_time(q)
        tau1 = traces[TraceKind.RISING_UNSETTLED].crossing_time(0.0)
        tau2 = traces[TraceKind.RISING_SETTLED].crossing_time(q)
        tau3 = traces[TraceKind.RISING_SETTLED].crossing_time(0.0)
        tau4 = traces[TraceKind.FALLING_SETTLED].crossing_time(q)
        return cls(
            ui=ui,
            amplitude=a_lv,
            unsettled_level=b_lv,
            traces=traces,
            level_p=p,
            level_q=q,
            level_r=0.0,
            taus=(tau0, tau1, tau2, tau3, tau4),
        )

    def level_of_bit(self, bit: int) -> float:
        return self.amplitude if bit else -self.amplitude

    def transition_crossings(self, level: float) -> dict:
        """Crossing time of ``level`` for each transition trace (None if missed)."""
        return {k: tr.crossing_time(level) for k, tr in self.traces.items()}


def trace_for_pattern(model: OneBitIsiModel, b_prev2: int, b_prev1: int, b_cur: int):
    """Select the slot trajectory implied by three consecutive bits.

    Returns a :class:`TransitionTrace` when ``b_prev1 != b_cur``, otherwise
    a :class:`NoTransition` at the current bit's settled level.
    """
    for b in (b_prev2, b_prev1, b_cur):
        if b not in (0, 1):
            raise ConfigError("pattern bits must be 0 or 1")
    if b_prev1 == b_cur:
        return NoTransition(level=model.level_of_bit(b_cur), from_unsettled=b_prev2 != b_prev1)
    rising = b_cur == 1
    settled = b_prev2 == b_prev1
    kind = {
        (True, True): TraceKind.RISING_SETTLED,
        (True, False): TraceKind.RISING_UNSETTLED,
        (False, True): TraceKind.FALLING_SETTLED,
        (False, False): TraceKind.FALLING_UNSETTLED,
    }[(rising, settled)]
    return model.traces[kind]


def synthesize_waveform(model: OneBitIsiModel, bits: BitStream, samples_per_ui: int) -> Waveform:
    """Render a bit stream through the abstract trace set.

    Slot k uses the transition trace selected by (b[k-2], b[k-1], b[k]);
    non-transition slots either hold the settled level or relax from the
    unsettled level over the same window, keeping the waveform continuous.
    The first slot is assumed settled.
    """
    b = bits.bits.astype(np.int64)
    n = b.size
    dt = model.ui / samples_per_ui
    offs = np.arange(samples_per_ui) * dt

    a_lv, b_lv = model.amplitude, model.unsettled_level
    ref = model.traces[TraceKind.RISING_SETTLED]
    settle_lo = TransitionTrace(TraceKind.FALLING_SETTLED, -b_lv, -a_lv, ref.t_start, ref.duration)
    settle_hi = TransitionTrace(TraceKind.RISING_SETTLED, b_lv, a_lv, ref.t_start, ref.duration)

    templates = np.empty((8, samples_per_ui))
    templates[0] = -a_lv
    templates[1] = a_lv
    templates[2] = settle_lo.value(offs)
    templates[3] = settle_hi.value(offs)
    templates[4] = model.traces[TraceKind.RISING_SETTLED].value(offs)
    templates[5] = model.traces[TraceKind.RISING_UNSETTLED].value(offs)
    templates[6] = model.traces[TraceKind.FALLING_SETTLED].value(offs)
    templates[7] = model.traces[TraceKind.FALLING_UNSETTLED].value(offs)

    prev = np.concatenate(([b[0]], b[:-1]))
    prev2 = np.concatenate(([b[0]], prev[:-1]))
    trans = b != prev
    settled = prev2 == prev
    idx = np.where(
        trans,
        np.where(b == 1, 4, 6) + (~settled).astype(np.int64),
        np.where(prev2 != prev, 2 + b, b),
    )
    samples = templates[idx].reshape(-1)
    return Waveform(sample_period=dt, samples=samples)
