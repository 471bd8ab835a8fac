"""Synthetic scenarios, ground-truth trajectories and noisy measurements.

Truth is propagated with the exact discrete map of the assembled system
(no separate ODE solver), so estimator tests see zero integration error.
Noise realizations are reproducible from explicit 64-bit seeds.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import InvalidParameterError, InvalidScheduleError
from .model import AssembledSystem, StructuralModel

SCENARIO_KINDS = ("ground_motion", "multi_impact")


def grid_times(duration: float, dt: float) -> np.ndarray:
    """Uniform time grid 0 .. duration with ceil(duration/dt)+1 samples."""
    if dt <= 0 or duration <= 0:
        raise InvalidParameterError("duration and dt must be positive")
    n_steps = math.ceil(duration / dt - 1e-9)
    return np.arange(n_steps + 1) * dt


@dataclass(frozen=True)
class Scenario:
    """One excitation history on a fixed time grid.

    ``input_series`` has one column per load channel; for ground motion
    that single column is the ground acceleration in m/s^2. For impact
    scenarios ``input_dofs`` records which 0-based DOF each column hits,
    in column order.
    """

    kind: str
    input_series: np.ndarray
    dt: float
    duration: float
    input_dofs: tuple = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidParameterError(f"unknown scenario kind {self.kind!r}")
        series = np.atleast_2d(np.asarray(self.input_series, dtype=float))
        if series.shape[0] == 1 and series.shape[1] > 1 and self.input_series.ndim == 1:
            series = series.T
        expected = grid_times(self.duration, self.dt).size
        if series.shape[0] != expected:
            raise InvalidParameterError(
                f"input series has {series.shape[0]} rows, grid needs {expected}"
            )
        object.__setattr__(self, "input_series", series)

    @property
    def times(self) -> np.ndarray:
        return grid_times(self.duration, self.dt)

    @property
    def n_inputs(self) -> int:
        return self.input_series.shape[1]


@dataclass(frozen=True)
class TruthTrajectory:
    """Reference trajectory: modal states plus recovered physical responses."""

    times: np.ndarray
    states: np.ndarray         # (T, 2 n_r)
    physical_disp: np.ndarray  # (T, n_s)
    physical_vel: np.ndarray
    physical_acc: np.ndarray
    inputs: np.ndarray         # (T, l)


@dataclass(frozen=True)
class MeasurementSet:
    """Noisy channel data; fully reproducible from ``seed``."""

    times: np.ndarray
    values: np.ndarray     # (T, q) in channel order
    noise_std: np.ndarray  # (q,)
    seed: int


def generate_impulse_train(
    schedule,
    pulse_width: float,
    pulse_peak: float,
    dt: float,
    duration: float,
) -> Scenario:
    """Half-sine tap trains on one column per struck DOF.

    ``schedule`` lists (dof, start_time, count, interval) groups; taps of
    one group land ``interval`` seconds apart. Columns appear in order of
    first appearance of each DOF. Samples outside active pulses are
    exactly zero; overlapping pulses on one channel are rejected.
    """
    times = grid_times(duration, dt)
    if pulse_width < 2 * dt:
        raise InvalidParameterError("pulse width must cover at least two timesteps")

    dofs: list = []
    taps: dict = {}
    for dof, start, count, interval in schedule:
        dof = int(dof)
        if dof < 0:
            raise InvalidParameterError("schedule DOFs must be non-negative")
        if dof not in taps:
            taps[dof] = []
            dofs.append(dof)
        for j in range(int(count)):
            t0 = float(start) + j * float(interval)
            if t0 < 0 or t0 + pulse_width > duration + 1e-9:
                raise InvalidParameterError(
                    f"pulse at t={t0:g}s on DOF {dof} leaves the time grid"
                )
            taps[dof].append(t0)

    series = np.zeros((times.size, len(dofs)))
    for col, dof in enumerate(dofs):
        starts = sorted(taps[dof])
        for prev, nxt in zip(starts, starts[1:]):
            if nxt < prev + pulse_width:
                raise InvalidScheduleError(
                    f"pulses at t={prev:g}s and t={nxt:g}s overlap on DOF {dof}"
                )
        for t0 in starts:
            mask = (times >= t0 - 1e-12) & (times <= t0 + pulse_width + 1e-12)
            series[mask, col] = pulse_peak * np.sin(np.pi * (times[mask] - t0) / pulse_width)
    return Scenario("multi_impact", series, dt, duration, input_dofs=tuple(dofs))


def generate_ground_motion(
    duration: float,
    dt: float,
    seed: int,
    band_hz=(0.3, 8.0),
    rms: float = 1.0,
) -> Scenario:
    """Band-limited stochastic ground acceleration (filtered white noise).

    This is a synthetic stand-in for recorded strong motion: white noise
    is band-passed between the corner frequencies and rescaled to the
    requested RMS. Identical seeds give identical records.
    """
    times = grid_times(duration, dt)
    lo, hi = band_hz
    nyq = 0.5 / dt
    if not 0 < lo < hi < nyq:
        raise InvalidParameterError(f"band {band_hz} invalid for Nyquist {nyq:g} Hz")
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(times.size)
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=1.0 / dt, output="sos")
    motion = scipy.signal.sosfilt(sos, white)
    scale = rms / max(float(np.sqrt(np.mean(motion**2))), 1e-300)
    return Scenario("ground_motion", (motion * scale)[:, None], dt, duration)


def load_ground_motion_csv(path, dt: float, duration=None) -> Scenario:
    """Import a two-column `t,ag` record and resample it onto the model grid.

    Header row is required; units are seconds and m/s^2. Resampling is
    linear interpolation.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["t", "ag"]:
            raise InvalidParameterError(f"{path}: expected header 't,ag'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if len(rows) < 2:
        raise InvalidParameterError(f"{path}: need at least two samples")
    t_src = np.array([r[0] for r in rows])
    a_src = np.array([r[1] for r in rows])
    if np.any(np.diff(t_src) <= 0):
        raise InvalidParameterError(f"{path}: time column must be strictly increasing")
    if duration is None:
        duration = float(t_src[-1])
    times = grid_times(duration, dt)
    motion = np.interp(times, t_src, a_src, left=0.0, right=0.0)
    return Scenario("ground_motion", motion[:, None], dt, duration)


def _check_scenario(system: AssembledSystem, scenario: Scenario) -> None:
    dss = system.dss
    if abs(scenario.dt - dss.dt) > 1e-12 * dss.dt:
        raise InvalidParameterError("scenario and system timesteps differ")
    if scenario.n_inputs != dss.n_inputs:
        raise InvalidParameterError(
            f"scenario has {scenario.n_inputs} input columns, model expects {dss.n_inputs}"
        )


def _recover_physical(system: AssembledSystem, states: np.ndarray, inputs: np.ndarray):
    phi = system.reduced.modal_matrix
    n_r = system.reduced.order
    disp = states[:, :n_r] @ phi.T
    vel = states[:, n_r:] @ phi.T
    acc = reconstruct_acceleration(system.structure, disp, vel, inputs)
    return disp, vel, acc


def simulate_truth(system: AssembledSystem, scenario: Scenario, x0=None) -> TruthTrajectory:
    """Noise-free propagation of the exact discrete map x_k = A x_{k-1} + B p_k.

    Requires the full-order system (n_r = n_s) with Q = 0 so the result
    is a genuine reference trajectory. Physical responses are recovered
    through the modal matrix, accelerations by direct evaluation of the
    equation of motion.
    """
    _check_scenario(system, scenario)
    if system.reduced.order != system.structure.n_dof:
        raise InvalidParameterError("truth simulation requires full order n_r = n_s")
    if np.any(system.dss.Q != 0.0):
        raise InvalidParameterError("truth simulation requires Q = 0")
    states = _propagate(system.dss.A, system.dss.B, scenario.input_series, x0, noise=None)
    disp, vel, acc = _recover_physical(system, states, scenario.input_series)
    return TruthTrajectory(scenario.times, states, disp, vel, acc, scenario.input_series)


def simulate_with_process_noise(
    system: AssembledSystem,
    scenario: Scenario,
    seed: int,
    x0=None,
    process_cov=None,
) -> TruthTrajectory:
    """Propagation with injected zero-mean white process noise.

    The noise covariance defaults to the system's own Q; used by the
    Monte-Carlo consistency checks and tuner identification studies wher
    the estimator's noise hypothesis must match an actual disturbance.
    """
    _check_scenario(system, scenario)
    q = system.dss.Q if process_cov is None else np.asarray(process_cov, dtype=float)
    n = system.dss.n_states
    w_eig, w_vec = np.linalg.eigh(0.5 * (q + q.T))
    sqrt_q = w_vec * np.sqrt(np.maximum(w_eig, 0.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((scenario.times.size - 1, n)) @ sqrt_q.T
    states = _propagate(system.dss.A, system.dss.B, scenario.input_series, x0, noise=noise)
    disp, vel, acc = _recover_physical(system, states, scenario.input_series)
    return TruthTrajectory(scenario.times, states, disp, vel, acc, scenario.input_series)


def _propagate(a, b, inputs, x0, noise):
    t_len = inputs.shape[0]
    n = a.shape[0]
    states = np.zeros((t_len, n))
    if x0 is not None:
        states[0] = np.asarray(x0, dtype=float)
        if states[0].shape != (n,):
            raise InvalidParameterError("initial state has wrong dimension")
    for k in range(1, t_len):
        states[k] = a @ states[k - 1] + b @ inputs[k]
        if noise is not None:
            states[k] += noise[k - 1]
    return states


def clean_outputs(system: AssembledSystem, truth: TruthTrajectory) -> np.ndarray:
    """Noise-free channel outputs y_k = C x_k + D p_k in layout order."""
    return truth.states @ system.dss.C.T + truth.inputs @ system.dss.D.T


def add_measurement_noise(
    clean: np.ndarray,
    seed: int,
    snr=None,
    std=None,
    times=None,
) -> MeasurementSet:
    """Add per-channel zero-mean white Gaussian noise.

    Exactly one of ``snr`` and ``std`` must be given (scalar or
    per-channel). An SNR spec sets std = RMS(channel)/SNR, so it is
    rejected on all-zero channels where that is undefined. The R matrix
    handed to estimators should be diag(noise_std^2).
    """
    clean = np.atleast_2d(np.asarray(clean, dtype=float))
    t_len, q = clean.shape
    if (snr is None) == (std is None):
        raise InvalidParameterError("give exactly one of snr or std")
    if snr is not None:
        snr_vec = np.broadcast_to(np.atleast_1d(np.asarray(snr, dtype=float)), (q,))
        if np.any(snr_vec <= 0):
            raise InvalidParameterError("SNR must be positive")
        rms = np.sqrt(np.mean(clean**2, axis=0))
        if np.any(rms == 0):
            raise InvalidParameterError(
                "SNR is undefined on an all-zero channel; give an explicit std"
            )
        std_vec = rms / snr_vec
    else:
        std_vec = np.broadcast_to(np.atleast_1d(np.asarray(std, dtype=float)), (q,)).astype(float)
        if np.any(std_vec < 0):
            raise InvalidParameterError("noise std must be non-negative")

    rng = np.random.default_rng(seed)
    values = clean + rng.standard_normal(clean.shape) * std_vec
    if times is None:
        times = np.arange(t_len, dtype=float)
    return MeasurementSet(np.asarray(times, dtype=float), values, std_vec.copy(), int(seed))


def reconstruct_acceleration(model: StructuralModel, disp, vel, force) -> np.ndarray:
    """Accelerations from the equation of motion: M a = S p - C v - K u.

    Pure algebra, no integration; accepts single vectors or (T, n)
    batches (last axis indexes DOFs / load channels).
    """
    disp = np.asarray(disp, dtype=float)
    vel = np.asarray(vel, dtype=float)
    force = np.asarray(force, dtype=float)
    single = disp.ndim == 1
    d2 = np.atleast_2d(disp)
    v2 = np.atleast_2d(vel)
    f2 = np.atleast_2d(force)
    rhs = (
        f2 @ model.input_distribution.T
        - v2 @ model.damping_matrix.T
        - d2 @ model.stiffness_matrix.T
    )
    acc = np.linalg.solve(model.mass_matrix, rhs.T).T
    return acc[0] if single else acc
