"""Joint input-state estimators on discrete state-space models.

Three recursions share one step-function shape (state, y) -> (state,
StepResult):

* ``uf_step`` -- the universal filter: minimum-variance unbiased input
  estimation by weighted least squares through the error matrix
  G = C B + D, followed by a rank-aware state update. Works with or
  without direct feedthrough, including rank-deficient D.
* ``us_step`` -- the universal smoother: the same idea applied to an
  extended observation window of N+1 stacked measurements, which
  requires the block-extended system matrices and a pair of running
  state/noise cross-covariances.
* ``akf_step`` -- the classical augmented-state baseline that models the
  unknown input as a random walk inside the state vector.

Step functions are pure: they never mutate their inputs and hold no
global state, so independent instances can advance concurrently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalDivergenceError
from .linalg import DEFAULT_RANK_TOL, pinv_psd, range_basis, sym
from .model import DiscreteStateSpace

__all__ = [
    "FilterState",
    "StepResult",
    "ExtendedMatrices",
    "SmootherState",
    "AugmentedState",
    "initial_filter_state",
    "initial_smoother_state",
    "initial_augmented_state",
    "uf_step",
    "us_step",
    "akf_step",
    "build_extended_matrices",
    "range_basis",
]


# ---------------------------------------------------------------------------
# State and result records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterState:
    """Posterior state estimate and covariance after ``step_index`` steps."""

    x_hat: np.ndarray
    P_x: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class StepResult:
    """Everything one estimator step produced.

    ``prior_state`` is the input-corrected prediction (the a-priori
    estimate after adding B p_hat); ``innovation_residual`` is the
    argument of the final gain correction, i.e. the post-input-estimation
    innovation. For the smoother the residual and input gain live on the
    stacked (N+1)-measurement window.
    """

    input_estimate: np.ndarray
    input_covariance: np.ndarray
    prior_state: np.ndarray
    posterior_state: np.ndarray
    posterior_covariance: np.ndarray
    gain_M: np.ndarray
    gain_K: np.ndarray
    innovation_residual: np.ndarray


@dataclass(frozen=True)
class SmootherState:
    """Smoother recursion state.

    Beyond the posterior (x_hat, P) this carries the cross-covariances
    between the state error and the *next* window's stacked process and
    measurement noise vectors; both start at zero.
    """

    x_hat: np.ndarray
    P: np.ndarray
    P_xw: np.ndarray  # (2 n_r, (N+1) 2 n_r)
    P_xv: np.ndarray  # (2 n_r, (N+1) q)
    step_index: int = 0


@dataclass(frozen=True)
class AugmentedState:
    """Random-walk-input baseline state: z = [x; p] with block covariance."""

    z_hat: np.ndarray
    P_z: np.ndarray
    q_state: float
    q_input: float
    step_index: int = 0


def initial_filter_state(dss: DiscreteStateSpace, x0=None, p0: float = 1e-9) -> FilterState:
    """Zero (or given) initial state with P0 = p0 * I."""
    n = dss.n_states
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    return FilterState(x_hat=x, P_x=p0 * np.eye(n), step_index=0)


def initial_smoother_state(
    dss: DiscreteStateSpace, window: int, x0=None, p0: float = 1e-9
) -> SmootherState:
    """Initial smoother state with zero noise cross-covariances."""
    n = dss.n_states
    q = dss.n_outputs
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    return SmootherState(
        x_hat=x,
        P=p0 * np.eye(n),
        P_xw=np.zeros((n, (window + 1) * n)),
        P_xv=np.zeros((n, (window + 1) * q)),
        step_index=0,
    )


def initial_augmented_state(
    dss: DiscreteStateSpace,
    q_state: float,
    q_input: float,
    x0=None,
    p0: float = 1e-9,
) -> AugmentedState:
    """Zero-input initial augmented state with P0 = p0 * I."""
    n = dss.n_states
    l = dss.n_inputs
    z = np.zeros(n + l)
    if x0 is not None:
        z[:n] = np.asarray(x0, dtype=float)
    return AugmentedState(
        z_hat=z, P_z=p0 * np.eye(n + l), q_state=float(q_state), q_input=float(q_input)
    )


def _require_finite(step: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalDivergenceError(step)


# ---------------------------------------------------------------------------
# Universal filter
# ---------------------------------------------------------------------------

def uf_step(
    dss: DiscreteStateSpace,
    state: FilterState,
    y_k: np.ndarray,
    pinv_tol: float = DEFAULT_RANK_TOL,
):
    """Advance the universal filter by one measurement.

    Input estimation: the biased prediction x_hat = A x_prev misses the
    contribution of the unknown input, so the innovation y - C x_hat
    implicitly defines it; weighted least squares through G = C B + D
    with weight pinv(P_e) gives the minimum-variance unbiased input
    estimate. Both pseudoinverses use a relative singular-value cutoff
    ``pinv_tol``.

    State estimation: the input-corrected prediction is refined by a
    gain built on an orthonormal basis of the range of the innovation
    covariance, which stays well-defined when input estimation has
    consumed measurement directions (rank-deficient case -> fewer basis
    vectors, and K = 0 when nothing is left).

    Returns the new ``FilterState`` (posterior covariance symmetrized)
    and a ``StepResult``.
    """
    a, b, c, d = dss.A, dss.B, dss.C, dss.D
    g = dss.G
    q_cov, r_cov = dss.Q, dss.R
    x_prev = state.x_hat
    p_prev = state.P_x
    y_k = np.asarray(y_k, dtype=float)
    if not np.all(np.isfinite(y_k)):
        raise NumericalDivergenceError("measurement", "y_k contains non-finite entries")

    # --- input estimation -------------------------------------------------
    x_pred = a @ x_prev
    p_e = c @ (a @ p_prev @ a.T + q_cov) @ c.T + r_cov
    p_e_inv = pinv_psd(p_e, pinv_tol)
    p_p = pinv_psd(g.T @ p_e_inv @ g, pinv_tol)
    gain_m = p_p @ g.T @ p_e_inv
    p_hat = gain_m @ (y_k - c @ x_pred)
    _require_finite("input_estimation", p_p, gain_m, p_hat)

    # --- state estimation --------------------------------------------------
    x_cal = x_pred + b @ p_hat
    p_xp = -p_prev @ a.T @ c.T @ gain_m.T          # E[x~_{k-1} p~^T]
    p_px = p_xp.T
    p_pw = -gain_m @ c @ q_cov                     # E[p~ w^T]
    p_wp = p_pw.T
    p_xcal = (
        a @ p_prev @ a.T
        + b @ p_p @ b.T
        + q_cov
        + a @ p_xp @ b.T
        + b @ p_px @ a.T
        + b @ p_pw
        + p_wp @ b.T
    )
    p_pxcal = p_px @ a.T + p_p @ b.T + p_pw        # E[p~ xcal~^T]
    p_pv = -gain_m @ r_cov
    p_vp = p_pv.T
    p_vxcal = p_vp @ b.T
    upsilon = c @ p_xcal + d @ p_pxcal + p_vxcal
    psi = sym(
        c @ upsilon.T
        + d @ (p_pxcal @ c.T + p_p @ d.T + p_pv)
        + p_vxcal @ c.T
        + p_vp @ d.T
        + r_cov
    )
    _require_finite("apriori_covariance", p_xcal, upsilon, psi)

    basis = range_basis(psi, pinv_tol)
    if basis.shape[1] == 0:
        gain_k = np.zeros((a.shape[0], c.shape[0]))
    else:
        core = pinv_psd(basis.T @ psi @ basis, pinv_tol)
        gain_k = upsilon.T @ basis @ core @ basis.T
    p_post = sym(gain_k @ psi @ gain_k.T - upsilon.T @ gain_k.T - gain_k @ upsilon + p_xcal)
    residual = y_k - c @ x_cal - d @ p_hat
    x_post = x_cal + gain_k @ residual
    _require_finite("posterior", gain_k, p_post, x_post)

    new_state = FilterState(x_hat=x_post, P_x=p_post, step_index=state.step_index + 1)
    result = StepResult(
        input_estimate=p_hat,
        input_covariance=p_p,
        prior_state=x_cal,
        posterior_state=x_post,
        posterior_covariance=p_post,
        gain_M=gain_m,
        gain_K=gain_k,
        innovation_residual=residual,
    )
    return new_state, result


# ---------------------------------------------------------------------------
# Universal smoothing
# ---------------------------------------------------------------------------

def _shift_up(block: int, window: int) -> np.ndarray:
    """One-block up-shift on a stacked window vector of N+1 blocks."""
    size = block * (window + 1)
    eps = np.zeros((size, size))
    if window > 0:
        eps[: block * window, block:] = np.eye(block * window)
    return eps


def _select_last(block: int, window: int) -> np.ndarray:
    """Selector of the last block of a stacked window vector."""
    size = block * (window + 1)
    eps = np.zeros((size, size))
    eps[block * window:, block * window:] = np.eye(block)
    return eps


@dataclass(frozen=True)
class ExtendedMatrices:
    """Block matrices of the stacked (N+1)-measurement observation window.

    ``C_ext`` stacks C A^i; ``D_ext`` is block lower triangular with
    C A^{i-j} B (and C B + D on the diagonal past the first row);
    ``H_ext`` carries the process-noise propagation. ``Q_kk``/``R_kk``
    are the white-noise window covariances I_{N+1} (x) Q / R, and
    ``Q_next``/``R_next`` the one-step-shifted cross terms between
    consecutive windows. ``shift_state``/``shift_meas`` are the up-shift
    matrices used by the cross-covariance recursion; ``last_state``/
    ``last_meas`` select a window's final block.

    ``D_breve``, ``H_breve`` and ``Sigma`` are the input-estimation
    matrices of the smoothing loop; they are time-invariant here so they
    are assembled once.
    """

    window: int
    C_ext: np.ndarray
    D_ext: np.ndarray
    H_ext: np.ndarray
    Q_kk: np.ndarray
    Q_next: np.ndarray
    R_kk: np.ndarray
    R_next: np.ndarray
    shift_state: np.ndarray
    shift_meas: np.ndarray
    last_state: np.ndarray
    last_meas: np.ndarray
    D_breve: np.ndarray
    H_breve: np.ndarray
    Sigma: np.ndarray
    sel_input: np.ndarray
    sel_state: np.ndarray


def build_extended_matrices(dss: DiscreteStateSpace, window: int) -> ExtendedMatrices:
    """Assemble the extended observation matrices for window size N >= 0.

    With N = 0 everything collapses to the single-step system (C_ext = C,
    D_ext = D, H_ext = 0) and the smoother reduces to the filter.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    n = dss.n_states
    l = dss.n_inputs
    q = dss.n_outputs
    np1 = window + 1
    a, b, c, d = dss.A, dss.B, dss.C, dss.D

    a_pow = [np.eye(n)]
    for _ in range(window):
        a_pow.append(a @ a_pow[-1])

    c_ext = np.vstack([c @ a_pow[i] for i in range(np1)])

    d_ext = np.zeros((np1 * q, np1 * l))
    h_ext = np.zeros((np1 * q, np1 * n))
    for i in range(np1):
        rows = slice(i * q, (i + 1) * q)
        for j in range(np1):
            cols = slice(j * l, (j + 1) * l)
            if j == 0:
                if i == 0:
                    d_ext[rows, cols] = d
            elif i == j:
                d_ext[rows, cols] = c @ b + d
            elif i > j:
                d_ext[rows, cols] = c @ a_pow[i - j] @ b
        for m in range(1, i + 1):
            h_ext[rows, m * n:(m + 1) * n] = c @ a_pow[i - m]

    q_kk = np.kron(np.eye(np1), dss.Q)
    r_kk = np.kron(np.eye(np1), dss.R)
    q_next = np.zeros_like(q_kk)
    r_next = np.zeros_like(r_kk)
    for j in range(window):
        q_next[(j + 1) * n:(j + 2) * n, j * n:(j + 1) * n] = dss.Q
        r_next[(j + 1) * q:(j + 2) * q, j * q:(j + 1) * q] = dss.R

    sel_input = np.hstack([np.eye(l), np.zeros((l, window * l))])
    sel_state = np.hstack([np.eye(n), np.zeros((n, window * n))])

    d_breve = d_ext + c_ext @ b @ sel_input
    h_breve = h_ext.copy()
    h_breve[:, :n] += c_ext
    sigma = np.hstack([c_ext @ a, h_breve, np.eye(np1 * q)])

    return ExtendedMatrices(
        window=window,
        C_ext=c_ext,
        D_ext=d_ext,
        H_ext=h_ext,
        Q_kk=q_kk,
        Q_next=q_next,
        R_kk=r_kk,
        R_next=r_next,
        shift_state=_shift_up(n, window),
        shift_meas=_shift_up(q, window),
        last_state=_select_last(n, window),
        last_meas=_select_last(q, window),
        D_breve=d_breve,
        H_breve=h_breve,
        Sigma=sigma,
        sel_input=sel_input,
        sel_state=sel_state,
    )


def assemble_lambda(ext: ExtendedMatrices, state: SmootherState) -> np.ndarray:
    """Joint covariance of [state error; window process noise; window meas noise].

    Diagonal blocks are P_{k-1}, Q_kk and R_kk; the state/noise blocks
    come from the running cross-covariances, and the two noise families
    are mutually independent.
    """
    n = state.P.shape[0]
    nw = ext.Q_kk.shape[0]
    nv = ext.R_kk.shape[0]
    lam = np.zeros((n + nw + nv, n + nw + nv))
    lam[:n, :n] = state.P
    lam[:n, n:n + nw] = state.P_xw
    lam[n:n + nw, :n] = state.P_xw.T
    lam[:n, n + nw:] = state.P_xv
    lam[n + nw:, :n] = state.P_xv.T
    lam[n:n + nw, n:n + nw] = ext.Q_kk
    lam[n + nw:, n + nw:] = ext.R_kk
    return lam


def us_step(
    dss: DiscreteStateSpace,
    ext: ExtendedMatrices,
    state: SmootherState,
    y_window: np.ndarray,
    pinv_tol: float = DEFAULT_RANK_TOL,
):
    """Advance the smoother by one step using measurements k .. k+N.

    ``y_window`` stacks the N+1 measurement vectors in channel-major
    order. The step solves the windowed weighted least-squares input
    problem, extracts the first-block input estimate, performs the
    rank-aware state update, and finally shifts the state/noise
    cross-covariances so the next window sees the correct correlation
    with the noise samples both windows share.
    """
    a, b = dss.A, dss.B
    n = dss.n_states
    np1q = ext.C_ext.shape[0]
    y_window = np.asarray(y_window, dtype=float)
    if y_window.shape != (np1q,):
        raise ValueError(f"y_window must have shape ({np1q},)")
    if not np.all(np.isfinite(y_window)):
        raise NumericalDivergenceError("measurement", "window contains non-finite entries")

    c_ext, d_ext, h_ext = ext.C_ext, ext.D_ext, ext.H_ext
    d_breve, h_breve, sigma = ext.D_breve, ext.H_breve, ext.Sigma
    sel_in, sel_st = ext.sel_input, ext.sel_state

    lam = assemble_lambda(ext, state)

    # --- input estimate ----------------------------------------------------
    x_pred = a @ state.x_hat
    s_mat = sym(sigma @ lam @ sigma.T)
    s_inv = pinv_psd(s_mat, pinv_tol)
    p_p_ext = pinv_psd(d_breve.T @ s_inv @ d_breve, pinv_tol)
    p_p = sel_in @ p_p_ext @ sel_in.T
    gain_m = p_p_ext @ d_breve.T @ s_inv
    p_ext_hat = gain_m @ (y_window - c_ext @ x_pred)
    p_hat = sel_in @ p_ext_hat
    _require_finite("input_estimation", p_p_ext, gain_m, p_hat)

    # --- state estimation matrices ------------------------------------------
    v_mat = b @ sel_in @ gain_m
    w_mat = -v_mat @ h_breve + sel_st
    a_breve = a - v_mat @ c_ext @ a
    pi_mat = np.hstack([a_breve, w_mat, -v_mat])
    theta = d_ext @ gain_m
    omega = np.hstack([
        c_ext @ a_breve - theta @ c_ext @ a,
        c_ext @ w_mat - theta @ h_breve + h_ext,
        -c_ext @ v_mat - theta + np.eye(np1q),
    ])

    # --- state estimate ------------------------------------------------------
    lam_pi = lam @ pi_mat.T
    p_xcal = sym(pi_mat @ lam_pi)
    upsilon = -omega @ lam_pi
    phi = sym(omega @ lam @ omega.T)
    _require_finite("apriori_covariance", p_xcal, upsilon, phi)

    basis = range_basis(phi, pinv_tol)
    if basis.shape[1] == 0:
        gain_k = np.zeros((n, np1q))
    else:
        core = pinv_psd(basis.T @ phi @ basis, pinv_tol)
        gain_k = -upsilon.T @ basis @ core @ basis.T
    x_cal = x_pred + b @ p_hat
    residual = y_window - c_ext @ x_cal - d_ext @ p_ext_hat
    x_post = x_cal + gain_k @ residual
    p_post = sym(p_xcal + gain_k @ upsilon + upsilon.T @ gain_k.T + gain_k @ phi @ gain_k.T)
    _require_finite("posterior", gain_k, x_post, p_post)

    # --- cross-covariances for the next window --------------------------------
    t_mat = np.eye(n) - gain_k @ c_ext
    w_script = t_mat @ w_mat + gain_k @ theta @ h_breve - gain_k @ h_ext
    v_script = -t_mat @ v_mat + gain_k @ theta - gain_k
    a_tilde = t_mat @ a_breve + gain_k @ theta @ c_ext @ a
    p_xw = a_tilde @ state.P_xw @ ext.shift_state.T + w_script @ ext.Q_next
    p_xv = a_tilde @ state.P_xv @ ext.shift_meas.T + v_script @ ext.R_next
    _require_finite("cross_covariance", p_xw, p_xv)

    new_state = SmootherState(
        x_hat=x_post, P=p_post, P_xw=p_xw, P_xv=p_xv, step_index=state.step_index + 1
    )
    result = StepResult(
        input_estimate=p_hat,
        input_covariance=sym(p_p),
        prior_state=x_cal,
        posterior_state=x_post,
        posterior_covariance=p_post,
        gain_M=gain_m,
        gain_K=gain_k,
        innovation_residual=residual,
    )
    return new_state, result


# ---------------------------------------------------------------------------
# Augmented-state baseline
# ---------------------------------------------------------------------------

def akf_step(dss: DiscreteStateSpace, state: AugmentedState, y_k: np.ndarray):
    """One predict/update cycle of the random-walk-input baseline.

    The augmented state z = [x; p] evolves with transition
    [[A, B], [0, I]] and is observed through [C, D]; the block process
    noise diag(q_state * I, q_input * I) encodes the fictitious input
    model. The returned ``innovation_residual`` is the pre-update
    innovation (with the predicted input), the closest analogue of the
    post-input-estimation residual used for array scoring.
    """
    a, b, c, d = dss.A, dss.B, dss.C, dss.D
    n = dss.n_states
    l = dss.n_inputs
    y_k = np.asarray(y_k, dtype=float)
    if not np.all(np.isfinite(y_k)):
        raise NumericalDivergenceError("measurement", "y_k contains non-finite entries")

    f_mat = np.block([
        [a, b],
        [np.zeros((l, n)), np.eye(l)],
    ])
    h_mat = np.hstack([c, d])
    q_blk = np.zeros((n + l, n + l))
    q_blk[:n, :n] = state.q_state * np.eye(n)
    q_blk[n:, n:] = state.q_input * np.eye(l)

    z_pred = f_mat @ state.z_hat
    p_pred = sym(f_mat @ state.P_z @ f_mat.T + q_blk)
    innovation = y_k - h_mat @ z_pred
    s_mat = sym(h_mat @ p_pred @ h_mat.T + dss.R)
    try:
        gain = np.linalg.solve(s_mat, h_mat @ p_pred).T
    except np.linalg.LinAlgError as exc:
        raise NumericalDivergenceError("innovation_covariance", str(exc)) from exc
    z_post = z_pred + gain @ innovation
    i_kh = np.eye(n + l) - gain @ h_mat
    p_post = sym(i_kh @ p_pred @ i_kh.T + gain @ dss.R @ gain.T)
    _require_finite("posterior", z_post, p_post)

    new_state = AugmentedState(
        z_hat=z_post,
        P_z=p_post,
        q_state=state.q_state,
        q_input=state.q_input,
        step_index=state.step_index + 1,
    )
    result = StepResult(
        input_estimate=z_post[n:],
        input_covariance=p_post[n:, n:],
        prior_state=z_pred[:n],
        posterior_state=z_post[:n],
        posterior_covariance=p_post,
        gain_M=gain[n:, :],
        gain_K=gain[:n, :],
        innovation_residual=innovation,
    )
    return new_state, result
