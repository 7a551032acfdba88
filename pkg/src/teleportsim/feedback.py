"""Stabilization controllers: HOM-dip timing lock and polarization lock.

Both are dither-and-compare minimizers gated by Poisson significance: they
apply probe offsets of alternating sign, accumulate the count difference
over window pairs, and act only when the difference exceeds two standard
deviations of the accumulated shot noise.  Controllers are pure state
machines driven through the per-window callback contract of
:mod:`teleportsim.netsim`: ``step(state, counts) -> (state, command)``,
where the command applies to the *next* window.

The timing lock's actuator is the sender's qubit generation time, shifted
in 4 ps quanta (every commanded value is an integer multiple of the step).
When a comparison is significant the controller takes a proportional step
toward the lower-count side, using the configured dip calibration
(baseline, depth, width from a dip scan) to convert the count asymmetry
into a time estimate; the correction is quantized and capped at the probe
amplitude so miscalibration cannot cause runaway.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class LockLostError(RuntimeError):
    """Raised when a controller has had no usable signal for too long."""


@dataclass(frozen=True)
class HomLockState:
    """Timing-lock state; shifts are integer multiples of ``step_ps``."""

    step_ps: float = 4.0
    probe_steps: int = 6
    max_accum_pairs: int = 4
    range_ps: float = 500.0
    # dip calibration (counts per window at baseline, fractional depth, ps)
    baseline: float = 1150.0
    dip_visibility: float = 0.35
    width_sigma_ps: float = 42.0
    # significance floor: windows with fewer counts carry no usable signal
    floor_counts: float = 5.0
    lock_lost_limit: int = 10
    # mutable-by-replacement runtime state
    base_shift_ps: float = 0.0
    search_direction: int = 1
    acc_diff: float = 0.0
    acc_sum: float = 0.0
    n_pairs: int = 0
    pending: float = 0.0
    have_pending: bool = False
    quiet_windows: int = 0
    lock_lost: bool = False

    @property
    def probe_ps(self) -> float:
        return self.probe_steps * self.step_ps

    def commanded_shift(self) -> float:
        """Shift applied during the upcoming window (base + current probe)."""
        return self.base_shift_ps + self.search_direction * self.probe_ps

    def slope_counts_per_ps(self) -> float:
        """Calibrated count asymmetry per ps of offset per window pair."""
        p = self.probe_ps
        s2 = self.width_sigma_ps**2
        return 2.0 * self.baseline * self.dip_visibility * np.exp(-p**2 / (2 * s2)) * p / s2


def hom_lock_step(state: HomLockState, window_counts: float) -> tuple[HomLockState, float]:
    """Consume one window of HOM-monitor coincidences; return the new state
    and the shift (ps) to apply to the sender for the next window.

    The controller alternates probe offsets of +-probe_steps quanta around
    the base shift.  Completed +/- pairs accumulate; once the accumulated
    difference is significant (> 2 sigma Poisson) the base moves toward the
    lower-count side by a proportional, quantized, capped correction.  If
    counts stay below the significance floor for more than
    ``lock_lost_limit`` windows, the lock declares itself lost.
    """
    if state.lock_lost:
        raise LockLostError("timing lock lost: no signal above floor")
    if window_counts < state.floor_counts:
        quiet = state.quiet_windows + 1
        state = replace(state, quiet_windows=quiet, lock_lost=quiet > state.lock_lost_limit)
        return state, state.commanded_shift()
    state = replace(state, quiet_windows=0)

    if not state.have_pending:
        # first half of a probe pair: remember counts, flip the probe sign
        state = replace(
            state, pending=window_counts, have_pending=True,
            search_direction=-state.search_direction,
        )
        return state, state.commanded_shift()

    # second half: the pending window was taken at -direction (sign flipped
    # after storing), this window at +direction... reconstruct signs
    c_now = window_counts
    c_prev = state.pending
    # counts at +probe minus counts at -probe
    diff = (c_now - c_prev) * state.search_direction
    acc_diff = state.acc_diff + diff
    acc_sum = state.acc_sum + c_now + c_prev
    n_pairs = state.n_pairs + 1
    sigma = np.sqrt(max(acc_sum, 1.0))
    state = replace(
        state, have_pending=False, acc_diff=acc_diff, acc_sum=acc_sum, n_pairs=n_pairs,
        search_direction=-state.search_direction,
    )
    significant = abs(acc_diff) > 2.0 * sigma
    if significant or n_pairs >= state.max_accum_pairs:
        if significant:
            slope = state.slope_counts_per_ps() * n_pairs
            estimate = acc_diff / slope if slope > 0 else 0.0
            # counts rise away from the dip: positive asymmetry at +probe
            # means the base sits above the minimum -> step down
            steps = int(np.clip(round(-estimate / state.step_ps), -state.probe_steps, state.probe_steps))
            if steps == 0:
                steps = -1 if estimate > 0 else 1
            new_base = state.base_shift_ps + steps * state.step_ps
            new_base = float(np.clip(new_base, -state.range_ps, state.range_ps))
            state = replace(state, base_shift_ps=new_base)
        state = replace(state, acc_diff=0.0, acc_sum=0.0, n_pairs=0)
    return state, state.commanded_shift()


@dataclass(frozen=True)
class PolLockState:
    """Polarization-lock state: coordinate descent on two actuator angles,
    minimizing the PBS reflection-port monitor rate."""

    step_rad: float = 0.01
    bound_rad: float = 1.0
    lock_lost_limit: int = 50
    # monitor counts above the ceiling (e.g. half the channel flux rejected)
    # indicate the tracker cannot keep up
    ceiling_counts: float = float("inf")
    actuator_x: float = 0.0
    actuator_y: float = 0.0
    axis: int = 0
    search_direction: int = 1
    pending: float = 0.0
    have_pending: bool = False
    rise_windows: int = 0
    lock_lost: bool = False

    @property
    def actuator(self) -> tuple[float, float]:
        return (self.actuator_x, self.actuator_y)

    def commanded_actuator(self) -> tuple[float, float]:
        probe = self.search_direction * self.step_rad
        if self.axis == 0:
            return (self.actuator_x + probe, self.actuator_y)
        return (self.actuator_x, self.actuator_y + probe)


def pol_lock_step(state: PolLockState, monitor_counts: float) -> tuple[PolLockState, tuple[float, float]]:
    """Consume one window of reflection-port counts; return the new state
    and the actuator angles for the next window.

    Dither-and-compare along one axis at a time with the same 2-sigma
    Poisson gate; axes alternate after every decision.  A persistent rise of
    the monitor rate above its best observed value marks the lock lost.
    """
    if state.lock_lost:
        raise LockLostError("polarization lock lost: monitor rate rising persistently")
    rise = state.rise_windows + 1 if monitor_counts > state.ceiling_counts else 0
    state = replace(state, rise_windows=rise, lock_lost=rise > state.lock_lost_limit)
    if not state.have_pending:
        state = replace(
            state, pending=monitor_counts, have_pending=True,
            search_direction=-state.search_direction,
        )
        return state, state.commanded_actuator()
    c_now = monitor_counts
    c_prev = state.pending
    diff = (c_now - c_prev) * state.search_direction
    sigma = np.sqrt(max(c_now + c_prev, 1.0))
    state = replace(state, have_pending=False, search_direction=-state.search_direction)
    if abs(diff) > 2.0 * sigma:
        move = -state.step_rad if diff > 0 else state.step_rad
        if state.axis == 0:
            new_x = float(np.clip(state.actuator_x + move, -state.bound_rad, state.bound_rad))
            state = replace(state, actuator_x=new_x)
        else:
            new_y = float(np.clip(state.actuator_y + move, -state.bound_rad, state.bound_rad))
            state = replace(state, actuator_y=new_y)
    state = replace(state, axis=1 - state.axis)
    return state, state.commanded_actuator()
