"""Adaptive process-noise selection with a candidate filter array.

A bank of identical estimators, differing only in their process-noise
hypothesis Q = q I, advances in parallel. Each candidate accumulates the
squared norm of its post-input-estimation innovations over a sliding
window of W steps; after every step the candidate with the lowest
accumulated error wins, and its state and covariance estimates
reinitialise the whole array. Error buffers are kept through the
broadcast so a single good step cannot flip the selection.

Selection is deterministic and independent of candidate evaluation
order: the winner is the argmin of (error, q) with ties broken toward
the smallest q.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ArrayDivergenceError, InvalidParameterError, NumericalDivergenceError
from .estimators import (
    build_extended_matrices,
    initial_augmented_state,
    initial_filter_state,
    initial_smoother_state,
    akf_step,
    uf_step,
    us_step,
)
from .linalg import DEFAULT_RANK_TOL
from .model import DiscreteStateSpace

ESTIMATOR_KINDS = ("uf", "us", "akf")


@dataclass(frozen=True)
class CandidateGrid:
    """Log-spaced process-noise hypotheses.

    Values are exactly 10**(log10(min) + j*spacing) for
    j = 0 .. count-1 with count = round(decades / spacing); the upper
    bound is therefore part of the lattice only when it lands on it.
    """

    q_values: np.ndarray
    spacing_exponent: float
    bounds: tuple

    @property
    def count(self) -> int:
        return self.q_values.size


def build_candidate_grid(q_min: float, q_max: float, spacing_exponent: float) -> CandidateGrid:
    """Exact logarithmic lattice between the given bounds."""
    if not (q_min > 0 and q_max > q_min):
        raise InvalidParameterError("need 0 < min < max for the candidate grid")
    if spacing_exponent <= 0:
        raise InvalidParameterError("spacing exponent must be positive")
    decades = math.log10(q_max) - math.log10(q_min)
    count = round(decades / spacing_exponent)
    if count < 1:
        raise InvalidParameterError("grid bounds are narrower than one spacing step")
    exponents = math.log10(q_min) + spacing_exponent * np.arange(count)
    return CandidateGrid(
        q_values=10.0 ** exponents,
        spacing_exponent=float(spacing_exponent),
        bounds=(float(q_min), float(q_max)),
    )


def akf_candidate_pairs(state_grid: CandidateGrid, input_grid: CandidateGrid):
    """Row-major Cartesian product of (q_state, q_input) hypotheses."""
    return [(float(qx), float(qp)) for qx in state_grid.q_values for qp in input_grid.q_values]


@dataclass(frozen=True)
class SelectionRecord:
    """Per-step outcome of the array selection."""

    step_index: int
    selected_q: tuple          # (q,) for uf/us, (q_state, q_input) for akf
    selected_error: float
    per_candidate_errors: np.ndarray = None


def innovation_error_update(buffer: deque, residual: np.ndarray):
    """Push a residual into a ring buffer and return the windowed error.

    The error is the sum of squared residual norms over the most recent
    W entries (fewer while the buffer is filling). The sum is recomputed
    from the buffer every call with exact (compensated) summation, so
    rolling updates and full recomputation agree to the last bit.
    """
    residual = np.asarray(residual, dtype=float)
    buffer.append(float(np.dot(residual, residual)))
    return buffer, math.fsum(buffer)


class FilterArray:
    """Candidate estimator bank with windowed-innovation selection.

    ``kind`` picks the per-candidate recursion: 'uf' and 'us' take one
    process-noise scalar per candidate, 'akf' takes (q_state, q_input)
    pairs (pass ``input_grid``). For 'us' every step consumes the
    stacked (N+1)-measurement window.

    A candidate that raises a numerical-divergence error is scored
    +inf for a full window W (the infinite entry must age out of its
    ring buffer) but stays in the array; its state is refreshed by the
    winner broadcast like everyone else's.
    """

    def __init__(
        self,
        dss_template: DiscreteStateSpace,
        grid,
        error_window: int,
        kind: str = "uf",
        smoothing_window: int = None,
        input_grid=None,
        x0=None,
        p0: float = 1e-9,
        pinv_tol: float = DEFAULT_RANK_TOL,
        record_candidate_errors: bool = False,
    ):
        if kind not in ESTIMATOR_KINDS:
            raise InvalidParameterError(f"unknown estimator kind {kind!r}")
        if error_window < 1:
            raise InvalidParameterError("error window W must be >= 1")
        self.kind = kind
        self.error_window = int(error_window)
        self.pinv_tol = float(pinv_tol)
        self.record_candidate_errors = bool(record_candidate_errors)
        self.step_index = 0
        self.winner_index = None

        q_values = grid.q_values if isinstance(grid, CandidateGrid) else np.asarray(grid, float)
        if kind == "akf":
            if input_grid is None:
                raise InvalidParameterError("akf arrays need an input-noise grid")
            qp_values = (
                input_grid.q_values
                if isinstance(input_grid, CandidateGrid)
                else np.asarray(input_grid, float)
            )
            self.q_keys = [(float(qx), float(qp)) for qx in q_values for qp in qp_values]
            self.states = [
                initial_augmented_state(dss_template, qx, qp, x0=x0, p0=p0)
                for qx, qp in self.q_keys
            ]
            self.dss = [dss_template] * len(self.q_keys)
            self.ext = None
        else:
            self.q_keys = [(float(qv),) for qv in q_values]
            self.dss = [dss_template.with_process_noise(qv) for (qv,) in self.q_keys]
            if kind == "us":
                if smoothing_window is None:
                    raise InvalidParameterError("us arrays need a smoothing window N")
                self.ext = [build_extended_matrices(d, smoothing_window) for d in self.dss]
                self.states = [
                    initial_smoother_state(d, smoothing_window, x0=x0, p0=p0) for d in self.dss
                ]
            else:
                self.ext = None
                self.states = [initial_filter_state(d, x0=x0, p0=p0) for d in self.dss]
        self.buffers = [deque(maxlen=self.error_window) for _ in self.q_keys]

    @property
    def n_candidates(self) -> int:
        return len(self.q_keys)

    def _advance_candidate(self, j: int, y):
        if self.kind == "uf":
            return uf_step(self.dss[j], self.states[j], y, pinv_tol=self.pinv_tol)
        if self.kind == "us":
            return us_step(self.dss[j], self.ext[j], self.states[j], y, pinv_tol=self.pinv_tol)
        return akf_step(self.dss[j], self.states[j], y)

    def _broadcast(self, winner: int) -> None:
        win = self.states[winner]
        for j in range(self.n_candidates):
            if j == winner:
                continue
            if self.kind == "akf":
                qx, qp = self.q_keys[j]
                self.states[j] = type(win)(
                    z_hat=win.z_hat, P_z=win.P_z, q_state=qx, q_input=qp,
                    step_index=win.step_index,
                )
            else:
                self.states[j] = win

    def step(self, y):
        """Advance all candidates on one measurement (window for 'us').

        Returns (SelectionRecord, winner's StepResult). Raises
        ``ArrayDivergenceError`` when every candidate is scored infinite.
        """
        results = [None] * self.n_candidates
        errors = np.empty(self.n_candidates)
        for j in range(self.n_candidates):
            try:
                new_state, res = self._advance_candidate(j, y)
                self.states[j] = new_state
                results[j] = res
                _, errors[j] = innovation_error_update(
                    self.buffers[j], res.innovation_residual
                )
            except NumericalDivergenceError:
                self.buffers[j].append(math.inf)
                errors[j] = math.inf

        if not np.any(np.isfinite(errors)):
            raise ArrayDivergenceError(
                f"all {self.n_candidates} candidates infinite at step {self.step_index + 1}"
            )
        winner = min(range(self.n_candidates), key=lambda j: (errors[j], self.q_keys[j]))
        self._broadcast(winner)
        self.winner_index = winner
        self.step_index += 1
        record = SelectionRecord(
            step_index=self.step_index,
            selected_q=self.q_keys[winner],
            selected_error=float(errors[winner]),
            per_candidate_errors=errors.copy() if self.record_candidate_errors else None,
        )
        return record, results[winner]


def array_step(array: FilterArray, y, dss_template=None):
    """Functional wrapper around ``FilterArray.step``.

    Returns (array, SelectionRecord, winner StepResult); the template
    argument is accepted for call-site symmetry but the array already
    holds its per-candidate models.
    """
    record, result = array.step(y)
    return array, record, result
