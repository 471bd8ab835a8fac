"""End-to-end estimation runs: measurements in, estimate traces out.

These loops wire an assembled system to one estimator (or a tuning
array) over a full measurement record and collect the per-step results
into an ``EstimateTrace``. Physical responses are recovered through the
modal matrix; accelerations are reconstructed from the equation of
motion with the estimated states and inputs, because the state-space
model never produces them directly.
"""

import numpy as np

from .errors import EndOfDataError, InvalidParameterError
from .estimators import (
    akf_step,
    build_extended_matrices,
    initial_augmented_state,
    initial_filter_state,
    initial_smoother_state,
    uf_step,
    us_step,
)
from .evaluate import EstimateTrace
from .linalg import DEFAULT_RANK_TOL
from .model import AssembledSystem
from .sim import MeasurementSet, reconstruct_acceleration
from .tuner import FilterArray


def _measurement_values(system: AssembledSystem, measurements):
    if isinstance(measurements, MeasurementSet):
        values = measurements.values
        times = measurements.times
    else:
        values = np.atleast_2d(np.asarray(measurements, dtype=float))
        times = np.arange(values.shape[0]) * system.dss.dt
    if values.shape[1] != system.dss.n_outputs:
        raise InvalidParameterError(
            f"measurements have {values.shape[1]} channels, layout has {system.dss.n_outputs}"
        )
    return values, np.asarray(times, dtype=float)


def _finish_trace(system, times, inputs, states, input_vars, cov_traces, selected_q, meta):
    phi = system.reduced.modal_matrix
    n_r = system.reduced.order
    disp = states[:, :n_r] @ phi.T
    vel = states[:, n_r:] @ phi.T
    acc = reconstruct_acceleration(system.structure, disp, vel, inputs)
    return EstimateTrace(
        times=times,
        input_estimates=inputs,
        state_estimates=states,
        physical_disp=disp,
        physical_vel=vel,
        physical_acc=acc,
        input_variances=input_vars,
        state_cov_trace=cov_traces,
        selected_q=selected_q,
        meta=meta,
    )


def run_uf(
    system: AssembledSystem,
    measurements,
    x0=None,
    p0: float = 1e-9,
    pinv_tol: float = DEFAULT_RANK_TOL,
) -> EstimateTrace:
    """Universal filter over a whole record (fixed Q from the system)."""
    values, times = _measurement_values(system, measurements)
    t_len = values.shape[0]
    l = system.dss.n_inputs
    n = system.dss.n_states

    state = initial_filter_state(system.dss, x0=x0, p0=p0)
    inputs = np.zeros((t_len, l))
    states = np.zeros((t_len, n))
    input_vars = np.zeros((t_len, l))
    cov_traces = np.zeros(t_len)
    states[0] = state.x_hat
    cov_traces[0] = np.trace(state.P_x)
    for k in range(1, t_len):
        state, res = uf_step(system.dss, state, values[k], pinv_tol=pinv_tol)
        inputs[k] = res.input_estimate
        states[k] = res.posterior_state
        input_vars[k] = np.diag(res.input_covariance)
        cov_traces[k] = np.trace(res.posterior_covariance)
    meta = {"estimator": "uf", "p0": p0, "pinv_tol": pinv_tol}
    return _finish_trace(system, times, inputs, states, input_vars, cov_traces, None, meta)


def run_us(
    system: AssembledSystem,
    measurements,
    window: int,
    x0=None,
    p0: float = 1e-9,
    pinv_tol: float = DEFAULT_RANK_TOL,
) -> EstimateTrace:
    """Universal smoothing over a whole record.

    Step k needs measurements up to k+N, so the final N steps of the
    record cannot be smoothed: the trace is truncated to T-N rows and
    the metadata records the effective reporting latency N*dt.
    """
    values, times = _measurement_values(system, measurements)
    t_len = values.shape[0]
    if t_len - window < 2:
        raise EndOfDataError(
            f"record of {t_len} samples cannot support window N={window}"
        )
    l = system.dss.n_inputs
    n = system.dss.n_states
    keep = t_len - window

    ext = build_extended_matrices(system.dss, window)
    state = initial_smoother_state(system.dss, window, x0=x0, p0=p0)
    inputs = np.zeros((keep, l))
    states = np.zeros((keep, n))
    input_vars = np.zeros((keep, l))
    cov_traces = np.zeros(keep)
    states[0] = state.x_hat
    cov_traces[0] = np.trace(state.P)
    for k in range(1, keep):
        y_window = values[k:k + window + 1].reshape(-1)
        state, res = us_step(system.dss, ext, state, y_window, pinv_tol=pinv_tol)
        inputs[k] = res.input_estimate
        states[k] = res.posterior_state
        input_vars[k] = np.diag(res.input_covariance)
        cov_traces[k] = np.trace(res.posterior_covariance)
    meta = {
        "estimator": "us",
        "window": window,
        "p0": p0,
        "pinv_tol": pinv_tol,
        "truncated_steps": window,
        "latency_seconds": window * system.dss.dt,
    }
    return _finish_trace(
        system, times[:keep], inputs, states, input_vars, cov_traces, None, meta
    )


def run_akf(
    system: AssembledSystem,
    measurements,
    q_state: float,
    q_input: float,
    x0=None,
    p0: float = 1e-9,
) -> EstimateTrace:
    """Augmented-state baseline over a whole record."""
    values, times = _measurement_values(system, measurements)
    t_len = values.shape[0]
    l = system.dss.n_inputs
    n = system.dss.n_states

    state = initial_augmented_state(system.dss, q_state, q_input, x0=x0, p0=p0)
    inputs = np.zeros((t_len, l))
    states = np.zeros((t_len, n))
    input_vars = np.zeros((t_len, l))
    cov_traces = np.zeros(t_len)
    states[0] = state.z_hat[:n]
    cov_traces[0] = np.trace(state.P_z[:n, :n])
    for k in range(1, t_len):
        state, res = akf_step(system.dss, state, values[k])
        inputs[k] = res.input_estimate
        states[k] = res.posterior_state
        input_vars[k] = np.diag(res.input_covariance)
        cov_traces[k] = np.trace(res.posterior_covariance[:n, :n])
    meta = {"estimator": "akf", "q_state": q_state, "q_input": q_input, "p0": p0}
    return _finish_trace(system, times, inputs, states, input_vars, cov_traces, None, meta)


def run_tuned(
    system: AssembledSystem,
    measurements,
    grid,
    error_window: int,
    kind: str = "uf",
    smoothing_window: int = None,
    input_grid=None,
    x0=None,
    p0: float = 1e-9,
    pinv_tol: float = DEFAULT_RANK_TOL,
):
    """Run a filter array over a record.

    Returns (EstimateTrace, list[SelectionRecord]). The trace's
    ``selected_q`` column holds the winning process-noise value per step
    (the state-noise value for 'akf').
    """
    values, times = _measurement_values(system, measurements)
    t_len = values.shape[0]
    l = system.dss.n_inputs
    n = system.dss.n_states

    if kind == "us":
        if smoothing_window is None:
            raise InvalidParameterError("tuned 'us' runs need a smoothing window N")
        keep = t_len - smoothing_window
        if keep < 2:
            raise EndOfDataError(
                f"record of {t_len} samples cannot support window N={smoothing_window}"
            )
    else:
        keep = t_len

    array = FilterArray(
        system.dss,
        grid,
        error_window=error_window,
        kind=kind,
        smoothing_window=smoothing_window,
        input_grid=input_grid,
        x0=x0,
        p0=p0,
        pinv_tol=pinv_tol,
    )
    inputs = np.zeros((keep, l))
    states = np.zeros((keep, n))
    input_vars = np.zeros((keep, l))
    cov_traces = np.zeros(keep)
    selected = np.zeros(keep)
    records = []
    if x0 is not None:
        states[0] = np.asarray(x0, dtype=float)
    cov_traces[0] = p0 * (n if kind != "akf" else n)
    for k in range(1, keep):
        if kind == "us":
            y = values[k:k + smoothing_window + 1].reshape(-1)
        else:
            y = values[k]
        record, res = array.step(y)
        records.append(record)
        inputs[k] = res.input_estimate
        states[k] = res.posterior_state
        input_vars[k] = np.diag(res.input_covariance)
        if kind == "akf":
            cov_traces[k] = np.trace(res.posterior_covariance[:n, :n])
        else:
            cov_traces[k] = np.trace(res.posterior_covariance)
        selected[k] = record.selected_q[0]
    meta = {
        "estimator": f"{kind}_tuned",
        "error_window": error_window,
        "p0": p0,
        "pinv_tol": pinv_tol,
    }
    if kind == "us":
        meta.update(
            window=smoothing_window,
            truncated_steps=smoothing_window,
            latency_seconds=smoothing_window * system.dss.dt,
        )
    trace = _finish_trace(
        system, times[:keep], inputs, states, input_vars, cov_traces, selected, meta
    )
    return trace, records
