"""Scoring of estimate traces against truth and covariance diagnostics."""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

QUANTITIES = ("input", "displacement", "velocity", "acceleration")


@dataclass
class EstimateTrace:
    """Per-timestep record of one estimation run.

    ``input_variances`` holds the diagonal of the input-error covariance,
    ``state_cov_trace`` the trace of the posterior state covariance.
    ``selected_q`` is present only for tuned runs. Row 0 echoes the
    initialization (zero input estimate, zero input variance).
    """

    times: np.ndarray
    input_estimates: np.ndarray   # (T, l)
    state_estimates: np.ndarray   # (T, 2 n_r)
    physical_disp: np.ndarray     # (T, n_s)
    physical_vel: np.ndarray
    physical_acc: np.ndarray
    input_variances: np.ndarray   # (T, l)
    state_cov_trace: np.ndarray   # (T,)
    selected_q: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t_len = self.times.size
        for name in (
            "input_estimates", "state_estimates", "physical_disp",
            "physical_vel", "physical_acc", "input_variances",
        ):
            if getattr(self, name).shape[0] != t_len:
                raise InvalidParameterError(f"{name} length differs from times")
        if self.state_cov_trace.shape[0] != t_len:
            raise InvalidParameterError("state_cov_trace length differs from times")


def nrmse(estimates, truth, skip: float = 0.0, dt: float = None, aggregate: str = "mean"):
    """Range-normalised estimation error against a truth series.

    Each channel's error is normalised by that channel's full-series
    truth range (max - min); the per-timestep figure is the RMS of the
    normalised errors across channels, and the result aggregates those
    figures over all timesteps after ``skip`` seconds. ``aggregate``
    'mean' (default) returns the per-step average; 'sum' returns the raw
    accumulated value.

    Returns (scalar, per_channel) where per_channel[c] is the mean
    absolute normalised error of channel c over the same window.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape[0] == 1 and np.asarray(estimates).ndim == 1:
        est = est.T
        tru = tru.T
    if est.shape != tru.shape:
        raise InvalidParameterError(f"shape mismatch {est.shape} vs {tru.shape}")
    if aggregate not in ("mean", "sum"):
        raise InvalidParameterError("aggregate must be 'mean' or 'sum'")

    ranges = tru.max(axis=0) - tru.min(axis=0)
    if np.any(ranges <= 0):
        bad = int(np.argmax(ranges <= 0))
        raise InvalidParameterError(f"truth channel {bad} has zero range")

    start = 0
    if skip:
        if dt is None:
            raise InvalidParameterError("skip in seconds needs dt")
        start = int(round(skip / dt))
        if start >= est.shape[0]:
            raise InvalidParameterError("skip removes the whole series")

    norm_err = (est[start:] - tru[start:]) / ranges
    per_step = np.sqrt(np.mean(norm_err**2, axis=1))
    scalar = float(per_step.sum() if aggregate == "sum" else per_step.mean())
    per_channel = np.abs(norm_err).mean(axis=0)
    if aggregate == "sum":
        per_channel = np.abs(norm_err).sum(axis=0)
    return scalar, per_channel


@dataclass(frozen=True)
class VarianceDiagnostics:
    """Convergence summary for one input-variance series."""

    channel: int
    final_over_median: float
    bounded: bool          # max <= 10 x median
    growing: bool          # monotone increase over the last third


@dataclass(frozen=True)
class CovarianceReport:
    per_input: tuple
    any_unbounded: bool
    any_growing: bool


def covariance_diagnostics(trace) -> CovarianceReport:
    """Flag unbounded or drifting input-error variances.

    A channel is unbounded when its maximum exceeds 10x its median, and
    growing when the last third of the series increases monotonically
    (within a tiny tolerance) with a net rise -- the classic drift
    symptom of poorly observed low-frequency content.

    Accepts an EstimateTrace or a bare (T, l) variance array.
    """
    variances = trace.input_variances if hasattr(trace, "input_variances") else trace
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    if variances.shape[0] == 1 and np.asarray(
        getattr(trace, "input_variances", trace)
    ).ndim == 1:
        variances = variances.T
    if variances.size == 0:
        raise InvalidParameterError("empty variance trace")

    reports = []
    for ch in range(variances.shape[1]):
        series = variances[:, ch]
        med = float(np.median(series))
        mx = float(np.max(series))
        final = float(series[-1])
        ratio = final / med if med > 0 else np.inf
        bounded = mx <= 10.0 * med if med > 0 else bool(mx == 0)
        tail = series[2 * series.size // 3:]
        if tail.size >= 3:
            diffs = np.diff(tail)
            wiggle = 1e-9 * max(float(np.median(np.abs(tail))), 1e-300)
            growing = bool(np.all(diffs >= -wiggle) and tail[-1] > tail[0] * (1 + 1e-9))
        else:
            growing = False
        reports.append(VarianceDiagnostics(ch, ratio, bounded, growing))
    return CovarianceReport(
        per_input=tuple(reports),
        any_unbounded=any(not r.bounded for r in reports),
        any_growing=any(r.growing for r in reports),
    )


@dataclass(frozen=True)
class ScoreRow:
    estimator: str
    quantity: str
    channel: str
    nrmse: float


@dataclass(frozen=True)
class ScoreReport:
    """NRMSE comparison across estimators, with optional tuning summaries."""

    rows: tuple
    transient_skip: float
    selected_q_summary: dict

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("estimator,quantity,channel,nrmse\n")
        for row in self.rows:
            out.write(f"{row.estimator},{row.quantity},{row.channel},{row.nrmse:.17g}\n")
        return out.getvalue()

    def to_text(self) -> str:
        names = []
        for row in self.rows:
            if row.estimator not in names:
                names.append(row.estimator)
        agg = {
            (row.estimator, row.quantity): row.nrmse
            for row in self.rows
            if row.channel == "all"
        }
        width = max([len(n) for n in names] + [9])
        lines = [f"NRMSE (skip = {self.transient_skip:g} s)"]
        header = "estimator".ljust(width) + "".join(q.rjust(15) for q in QUANTITIES)
        lines.append(header)
        lines.append("-" * len(header))
        for name in names:
            cells = "".join(
                (f"{agg[(name, q)]:15.6g}" if (name, q) in agg else " " * 15)
                for q in QUANTITIES
            )
            lines.append(name.ljust(width) + cells)
        for name, summary in self.selected_q_summary.items():
            lines.append(
                f"{name}: selected log10(q) median {summary['median_log10']:.3f}, "
                f"IQR {summary['iqr_log10']:.3f} over {summary['steps']} steps"
            )
        return "\n".join(lines) + "\n"


def _trace_quantity(trace: EstimateTrace, truth, quantity: str):
    if quantity == "input":
        return trace.input_estimates, truth.inputs
    if quantity == "displacement":
        return trace.physical_disp, truth.physical_disp
    if quantity == "velocity":
        return trace.physical_vel, truth.physical_vel
    return trace.physical_acc, truth.physical_acc


def compare_report(
    traces,
    truth,
    skip: float = 0.0,
    input_labels=None,
    dof_labels=None,
) -> ScoreReport:
    """Score named traces against one truth trajectory.

    ``traces`` maps names to EstimateTrace objects (dict or pairs). All
    traces must live on the truth grid; a smoothed trace may be shorter
    (its tail is truncated), in which case every estimator is scored
    over the common prefix so the comparison stays fair.
    """
    items = list(traces.items()) if isinstance(traces, dict) else list(traces)
    if not items:
        raise InvalidParameterError("no traces to compare")
    dt = float(truth.times[1] - truth.times[0])
    common = min(min(tr.times.size for _, tr in items), truth.times.size)
    for name, tr in items:
        if not np.allclose(tr.times[:common], truth.times[:common], rtol=0, atol=1e-9 * dt):
            raise InvalidParameterError(f"trace {name!r} is not on the truth time grid")

    rows = []
    q_summary = {}
    for name, tr in items:
        for quantity in QUANTITIES:
            est, tru = _trace_quantity(tr, truth, quantity)
            scalar, per_channel = nrmse(est[:common], tru[:common], skip=skip, dt=dt)
            rows.append(ScoreRow(name, quantity, "all", scalar))
            labels = input_labels if quantity == "input" else dof_labels
            for ch, value in enumerate(per_channel):
                label = labels[ch] if labels else str(ch + 1)
                rows.append(ScoreRow(name, quantity, label, float(value)))
        if tr.selected_q is not None:
            logq = np.log10(tr.selected_q[np.asarray(tr.selected_q) > 0])
            if logq.size:
                q1, q3 = np.percentile(logq, [25, 75])
                q_summary[name] = {
                    "median_log10": float(np.median(logq)),
                    "iqr_log10": float(q3 - q1),
                    "steps": int(logq.size),
                }
    return ScoreReport(rows=tuple(rows), transient_skip=float(skip), selected_q_summary=q_summary)
