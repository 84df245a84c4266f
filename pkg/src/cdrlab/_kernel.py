"""Numba-compiled hot path of the closed-loop simulation.

The loop is strictly sequential (every sample step feeds back into the
VCO), so it runs as one compiled kernel over the waveform sample grid.
The same compiled RNG/comparator/decision helpers back the Python-level
operations so both paths compute identical results.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

# Fault codes returned by run_loop.
FAULT_NONE = 0
FAULT_FREQ_NONPOSITIVE = 1
FAULT_EDGE_OVERFLOW = 2


@njit(cache=True)
def rng_seed_state(seed):
    """SplitMix64 scramble of the seed into a non-zero xorshift state."""
    z = np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    if z == np.uint64(0):
        z = np.uint64(0x9E3779B97F4A7C15)
    return z


@njit(cache=True)
def rng_next(state):
    """xorshift64* step; state is a length-1 uint64 array, returns uint64."""
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(0x2545F4914F6CDD1D)


@njit(cache=True)
def comparator_bit(v, threshold, band, state):
    """1 above threshold, 0 below; a seeded fair coin inside the band."""
    d = v - threshold
    if d > band:
        return 1
    if d < -band:
        return 0
    return 1 if (rng_next(state) >> np.uint64(63)) else 0


@njit(cache=True)
def alexander_sign(a, b, c):
    """-1 clock early (delay), +1 clock late (advance), 0 hold."""
    if a == b and b == c:
        return 0
    if a == b:
        return -1
    if b == c:
        return 1
    return 0  # edge sample disagrees with both centers: hold


@njit(cache=True)
def threshold_sign(b2, b1, bm, b0):
    """+1 raise threshold, -1 lower threshold, 0 no action."""
    if b2 == 0 and b1 != b0:
        return 1 if bm == 1 else -1
    return 0


@njit(cache=True)
def run_loop(
    samples, dt, t0,
    f0, kvco, icp, r_filter, c_filter,
    v_off, vth_gain, vth_enabled, vth_clamp,
    meta_band, seed,
    phase0, v_cap0,
    decim,
    rising_times, falling_times, center_bits,
    rec_time, rec_vc, rec_vthfb,
):
    """Advance the full loop over the sample grid; fill output arrays.

    Clock edges are refined by linear interpolation of the VCO phase and
    the waveform.  The charge pump asserts at each rising-edge decision
    and de-asserts at the following falling edge (half a clock period),
    with the capacitor integral split exactly at the toggle instants.

    Returns (n_rising, n_falling, n_records, n_mid_ones, fault_code).
    """
    n = samples.size
    state = np.empty(1, dtype=np.uint64)
    state[0] = rng_seed_state(seed)

    phase = phase0
    v_cap = v_cap0
    v_th_fb = 0.0
    pump = 0          # signed pump drive: -1 sink, 0 off, +1 source
    b_prev2 = 0
    b_prev1 = 0
    b_mid = 0
    n_center = 0      # rising-edge center samples taken so far
    have_mid = False

    nr = 0
    nf = 0
    nrec = 0
    n_mid_ones = 0
    max_edges = rising_times.size

    for i in range(n - 1):
        cur = pump * icp
        v_c = v_cap + cur * r_filter
        freq = f0 + kvco * v_c
        if freq <= 0.0:
            return nr, nf, nrec, n_mid_ones, FAULT_FREQ_NONPOSITIVE

        if i % decim == 0:
            rec_time[nrec] = t0 + i * dt
            rec_vc[nrec] = v_c
            rec_vthfb[nrec] = v_th_fb
            nrec += 1

        dphi = TWO_PI * freq * dt
        boundary = (np.floor(phase / np.pi) + 1.0) * np.pi
        new_phase = phase + dphi

        if new_phase < boundary:
            phase = new_phase
            v_cap += cur * dt / c_filter
            continue

        # One clock edge inside this step (dphi << pi by construction).
        frac = (boundary - phase) / dphi
        t_edge = t0 + (i + frac) * dt
        v_at = samples[i] + frac * (samples[i + 1] - samples[i])
        m = int(np.round(boundary / np.pi))
        rising = (m % 2) == 0

        if rising:
            bit = comparator_bit(v_at, 0.0, meta_band, state)
            if nr >= max_edges:
                return nr, nf, nrec, n_mid_ones, FAULT_EDGE_OVERFLOW
            rising_times[nr] = t_edge
            center_bits[nr] = bit
            nr += 1
            if n_center >= 1 and have_mid:
                pd = alexander_sign(b_prev1, b_mid, bit)
                pump = pd
                if vth_enabled != 0 and n_center >= 2:
                    ta = threshold_sign(b_prev2, b_prev1, b_mid, bit)
                    v_th_fb += ta * vth_gain
                    if v_th_fb > vth_clamp:
                        v_th_fb = vth_clamp
                    elif v_th_fb < -vth_clamp:
                        v_th_fb = -vth_clamp
                have_mid = False
            b_prev2 = b_prev1
            b_prev1 = bit
            n_center += 1
        else:
            b_mid = comparator_bit(v_at, v_th_fb - v_off, meta_band, state)
            n_mid_ones += b_mid
            have_mid = True
            if nf >= max_edges:
                return nr, nf, nrec, n_mid_ones, FAULT_EDGE_OVERFLOW
            falling_times[nf] = t_edge
            nf += 1
            pump = 0  # de-assert: drive lasted exactly half a clock period

        # Integrate the capacitor in two pieces around the pump toggle.
        v_cap += cur * (frac * dt) / c_filter
        cur2 = pump * icp
        v_c2 = v_cap + cur2 * r_filter
        freq2 = f0 + kvco * v_c2
        if freq2 <= 0.0:
            return nr, nf, nrec, n_mid_ones, FAULT_FREQ_NONPOSITIVE
        phase = boundary + TWO_PI * freq2 * (1.0 - frac) * dt
        v_cap += cur2 * ((1.0 - frac) * dt) / c_filter

    return nr, nf, nrec, n_mid_ones, FAULT_NONE
