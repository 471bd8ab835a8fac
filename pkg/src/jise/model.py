"""Structural models and their state-space representations.

Builds the chain

    physical (M_s, C_s, K_s, S)
      -> modal reduction (Phi, M_r, C_r, K_r, S_r)
      -> continuous state space (dx/dt = Acal x + Bcal p)
      -> discrete state space (x_k = A x_{k-1} + B p_k)

for a linear structural system, together with the output/feedforward
matrices of a chosen sensor layout. Inputs are held constant over each
timestep (zero-order hold), so the discrete process equation carries the
input at the *new* sample, p_k; the simulator and every estimator in this
package share that convention.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError
from .linalg import min_eigenvalue, sym, symmetry_defect

CHANNEL_KINDS = ("displacement", "velocity", "acceleration")

_KIND_ALIASES = {
    "d": "displacement",
    "v": "velocity",
    "a": "acceleration",
    "displacement": "displacement",
    "velocity": "velocity",
    "acceleration": "acceleration",
}


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuralModel:
    """Physical matrices of an n_s-DOF linear structure.

    ``input_distribution`` maps the l applied loads onto the DOFs; for a
    ground-motion model it equals -M_s @ i with i the unit influence
    vector, so the single "load" is the ground acceleration itself.
    """

    mass_matrix: np.ndarray
    damping_matrix: np.ndarray
    stiffness_matrix: np.ndarray
    input_distribution: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass_matrix, dtype=float)
        c = np.asarray(self.damping_matrix, dtype=float)
        k = np.asarray(self.stiffness_matrix, dtype=float)
        s = np.atleast_2d(np.asarray(self.input_distribution, dtype=float))
        n = m.shape[0]
        if m.shape != (n, n) or c.shape != (n, n) or k.shape != (n, n):
            raise InvalidParameterError("mass/damping/stiffness must be square and same size")
        if s.shape[0] != n:
            raise InvalidParameterError("input_distribution must have one row per DOF")
        if symmetry_defect(m) > 1e-12 or symmetry_defect(k) > 1e-12:
            raise InvalidParameterError("mass and stiffness matrices must be symmetric")
        if min_eigenvalue(m) <= 0:
            raise InvalidParameterError("mass matrix must be positive definite")
        object.__setattr__(self, "mass_matrix", m)
        object.__setattr__(self, "damping_matrix", c)
        object.__setattr__(self, "stiffness_matrix", k)
        object.__setattr__(self, "input_distribution", s)

    @property
    def n_dof(self) -> int:
        return self.mass_matrix.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.input_distribution.shape[1]


@dataclass(frozen=True)
class ReducedModel:
    """Modal-reduced matrices on the n_r lowest mass-normalized modes."""

    modal_matrix: np.ndarray      # (n_s, n_r), mass-normalized mode shapes
    reduced_mass: np.ndarray      # (n_r, n_r)
    reduced_damping: np.ndarray
    reduced_stiffness: np.ndarray
    reduced_input: np.ndarray     # (n_r, l)

    @property
    def order(self) -> int:
        return self.modal_matrix.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.reduced_input.shape[1]


@dataclass(frozen=True)
class ContinuousStateSpace:
    """First-order form dx/dt = state_matrix @ x + input_matrix @ p."""

    state_matrix: np.ndarray  # (2 n_r, 2 n_r)
    input_matrix: np.ndarray  # (2 n_r, l)


@dataclass(frozen=True)
class SensorLayout:
    """Ordered measurement channels; order fixes the rows of C, D and files.

    Each channel is a (kind, dof_index) pair with kind one of
    'displacement' | 'velocity' | 'acceleration' (single-letter aliases
    'd'/'v'/'a' accepted) and dof_index 0-based.
    """

    channels: tuple

    def __post_init__(self):
        norm = []
        for ch in self.channels:
            kind, dof = ch
            if kind not in _KIND_ALIASES:
                raise InvalidParameterError(f"unknown channel kind {kind!r}")
            if int(dof) < 0:
                raise InvalidParameterError("dof_index must be non-negative")
            norm.append((_KIND_ALIASES[kind], int(dof)))
        object.__setattr__(self, "channels", tuple(norm))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def validate_against(self, n_dof: int) -> None:
        for kind, dof in self.channels:
            if dof >= n_dof:
                raise InvalidParameterError(
                    f"channel ({kind}, {dof}) exceeds model with {n_dof} DOFs"
                )


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Discrete model consumed by every estimator.

    The error matrix G = C @ B + D is always assembled from the stored
    matrices, never set independently. Q must be symmetric PSD and R
    symmetric positive definite.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        l = self.B.shape[1]
        q = self.C.shape[0]
        if self.A.shape != (n, n) or self.B.shape != (n, l):
            raise InvalidParameterError("A/B dimensions inconsistent")
        if self.C.shape != (q, n) or self.D.shape != (q, l):
            raise InvalidParameterError("C/D dimensions inconsistent")
        if self.dt <= 0:
            raise InvalidParameterError("dt must be positive")
        if self.Q.shape != (n, n) or self.R.shape != (q, q):
            raise InvalidParameterError("Q/R dimensions inconsistent")
        if symmetry_defect(self.Q) > 1e-12 or symmetry_defect(self.R) > 1e-12:
            raise InvalidParameterError("Q and R must be symmetric")
        if min_eigenvalue(self.Q) < -1e-12 * max(1.0, float(np.max(np.abs(self.Q)))):
            raise InvalidParameterError("Q must be positive semidefinite")
        if min_eigenvalue(self.R) <= 0:
            raise InvalidParameterError("R must be positive definite")

    @property
    def G(self) -> np.ndarray:
        """Error matrix G = C B + D mapping inputs into the innovation."""
        return self.C @ self.B + self.D

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def with_process_noise(self, q) -> "DiscreteStateSpace":
        """Return a copy with Q replaced by q*I (scalar) or the given matrix."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 0:
            qmat = float(q) * np.eye(self.n_states)
        else:
            qmat = q
        return replace(self, Q=qmat)


@dataclass(frozen=True)
class AssembledSystem:
    """Convenience bundle tying the model chain to one sensor layout."""

    structure: StructuralModel
    reduced: ReducedModel
    continuous: ContinuousStateSpace
    dss: DiscreteStateSpace
    layout: SensorLayout


# ---------------------------------------------------------------------------
# Construction operations
# ---------------------------------------------------------------------------

def ground_influence(n_dof: int) -> np.ndarray:
    """Unit influence vector for uniform horizontal ground excitation."""
    return np.ones((n_dof, 1))


def build_shear_frame(
    storey_masses,
    storey_stiffnesses,
    damping_ratios=None,
    rayleigh=None,
    inputs="ground",
) -> StructuralModel:
    """Assemble the physical model of a shear building.

    Masses are lumped per floor (diagonal M); each storey stiffness
    couples a floor to the one below, giving the classic tridiagonal K.
    Damping comes either from per-mode ratios (built through the
    mass-normalized modal basis) or a Rayleigh (alpha, beta) pair.

    ``inputs`` selects the load model: the string 'ground' produces the
    single-column ground-acceleration distribution -M @ 1, while a
    sequence of 0-based floor indices produces one Boolean point-force
    column per entry.
    """
    m = np.asarray(storey_masses, dtype=float)
    k = np.asarray(storey_stiffnesses, dtype=float)
    if m.size == 0 or m.shape != k.shape or m.ndim != 1:
        raise InvalidParameterError("mass and stiffness lists must be non-empty and equal length")
    if np.any(m <= 0) or np.any(k <= 0):
        raise InvalidParameterError("storey masses and stiffnesses must be positive")
    n = m.size

    mass = np.diag(m)
    stiff = np.zeros((n, n))
    for i in range(n):
        stiff[i, i] += k[i]
        if i + 1 < n:
            stiff[i, i] += k[i + 1]
            stiff[i, i + 1] -= k[i + 1]
            stiff[i + 1, i] -= k[i + 1]

    if damping_ratios is not None and rayleigh is not None:
        raise InvalidParameterError("give either damping_ratios or rayleigh, not both")
    if rayleigh is not None:
        alpha, beta = rayleigh
        damp = alpha * mass + beta * stiff
    elif damping_ratios is not None:
        zeta = np.asarray(damping_ratios, dtype=float)
        if zeta.shape != (n,):
            raise InvalidParameterError("need one damping ratio per mode")
        phi, omega = _modal_basis(mass, stiff)
        # C_s = M Phi diag(2 zeta omega) Phi^T M, the inverse modal transform
        damp = mass @ phi @ np.diag(2.0 * zeta * omega) @ phi.T @ mass
        damp = sym(damp)
    else:
        damp = np.zeros((n, n))

    if isinstance(inputs, str):
        if inputs != "ground":
            raise InvalidParameterError(f"unknown input spec {inputs!r}")
        dist = -mass @ ground_influence(n)
    else:
        dofs = [int(d) for d in inputs]
        if not dofs:
            raise InvalidParameterError("point-force input needs at least one DOF")
        dist = np.zeros((n, len(dofs)))
        for j, d in enumerate(dofs):
            if not 0 <= d < n:
                raise InvalidParameterError(f"input DOF {d} out of range")
            dist[d, j] = 1.0

    return StructuralModel(mass, damp, stiff, dist)


def _modal_basis(mass: np.ndarray, stiff: np.ndarray):
    """Mass-normalized modes of (K, M), ascending frequency, fixed signs.

    Ties in frequency are broken by the ascending index of each mode's
    dominant DOF; signs are fixed so the first nonzero entry of every
    mode is positive.
    """
    try:
        lam, phi = scipy.linalg.eigh(stiff, mass)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise InvalidParameterError(f"generalized eigensolve failed: {exc}") from exc
    lam = np.maximum(lam, 0.0)
    omega = np.sqrt(lam)

    order = np.argsort(omega, kind="stable")
    omega = omega[order]
    phi = phi[:, order]
    # stable tie-break: within equal-frequency groups, sort by dominant DOF
    i = 0
    while i < omega.size:
        j = i + 1
        while j < omega.size and abs(omega[j] - omega[i]) <= 1e-12 * max(omega[i], 1.0):
            j += 1
        if j - i > 1:
            dom = [int(np.argmax(np.abs(phi[:, c]))) for c in range(i, j)]
            sub = np.argsort(dom, kind="stable")
            phi[:, i:j] = phi[:, i + sub]
        i = j

    for c in range(phi.shape[1]):
        col = phi[:, c]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            phi[:, c] = -col
    return phi, omega


def natural_frequencies(model: StructuralModel) -> np.ndarray:
    """Undamped natural frequencies in Hz, ascending."""
    _, omega = _modal_basis(model.mass_matrix, model.stiffness_matrix)
    return omega / (2.0 * np.pi)


def modal_reduce(model: StructuralModel, n_r: int) -> ReducedModel:
    """Project the physical model onto its n_r lowest modes."""
    n = model.n_dof
    if not 1 <= n_r <= n:
        raise InvalidParameterError(f"n_r must be in [1, {n}], got {n_r}")
    phi, _ = _modal_basis(model.mass_matrix, model.stiffness_matrix)
    phi = phi[:, :n_r]
    return ReducedModel(
        modal_matrix=phi,
        reduced_mass=sym(phi.T @ model.mass_matrix @ phi),
        reduced_damping=sym(phi.T @ model.damping_matrix @ phi),
        reduced_stiffness=sym(phi.T @ model.stiffness_matrix @ phi),
        reduced_input=phi.T @ model.input_distribution,
    )


def assemble_continuous(reduced: ReducedModel) -> ContinuousStateSpace:
    """First-order state matrices from the reduced second-order model."""
    n_r = reduced.order
    try:
        mk = np.linalg.solve(reduced.reduced_mass, reduced.reduced_stiffness)
        mc = np.linalg.solve(reduced.reduced_mass, reduced.reduced_damping)
        ms = np.linalg.solve(reduced.reduced_mass, reduced.reduced_input)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"singular reduced mass matrix: {exc}") from exc
    a = np.block([
        [np.zeros((n_r, n_r)), np.eye(n_r)],
        [-mk, -mc],
    ])
    b = np.vstack([np.zeros((n_r, reduced.n_inputs)), ms])
    return ContinuousStateSpace(a, b)


def discretize(css: ContinuousStateSpace, dt: float):
    """Exact zero-order-hold discretization.

    A = exp(Acal dt) and B = (A - I) Acal^{-1} Bcal. When Acal is
    singular (zero-frequency modes) the inverse formula is undefined and
    B falls back to its convergent series sum_{j>=1} Acal^{j-1} dt^j / j!
    applied to Bcal, which is the analytic continuation of the same
    integral.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    acal = np.asarray(css.state_matrix, dtype=float)
    bcal = np.asarray(css.input_matrix, dtype=float)
    a = scipy.linalg.expm(acal * dt)

    sv = np.linalg.svd(acal, compute_uv=False) if acal.size else np.array([0.0])
    if sv[0] > 0 and sv[-1] > 1e-12 * sv[0]:
        b = (a - np.eye(a.shape[0])) @ np.linalg.solve(acal, bcal)
    else:
        b = _zoh_input_series(acal, bcal, dt)
    return a, b


def _zoh_input_series(acal: np.ndarray, bcal: np.ndarray, dt: float) -> np.ndarray:
    """Series form of int_0^dt exp(Acal s) ds @ Bcal."""
    n = acal.shape[0]
    term = dt * np.eye(n)
    total = term.copy()
    for j in range(2, 80):
        term = term @ (acal * dt) / j
        total += term
        if np.max(np.abs(term)) <= 1e-18 * max(np.max(np.abs(total)), 1e-300):
            break
    return total @ bcal


def output_matrices(reduced: ReducedModel, layout: SensorLayout):
    """Measurement matrices (C, D) for a physical-DOF sensor layout.

    Channels live on floors, so the Boolean extraction is composed with
    the modal matrix: displacement and velocity rows select Phi-rows of
    the modal states, acceleration rows carry the -M_r^{-1}K_r /
    -M_r^{-1}C_r blocks and pick up direct feedthrough through
    M_r^{-1} S_r. D is nonzero only on acceleration rows.
    """
    layout.validate_against(reduced.modal_matrix.shape[0])
    phi = reduced.modal_matrix
    n_r = reduced.order
    l = reduced.n_inputs
    mk = np.linalg.solve(reduced.reduced_mass, reduced.reduced_stiffness)
    mc = np.linalg.solve(reduced.reduced_mass, reduced.reduced_damping)
    ms = np.linalg.solve(reduced.reduced_mass, reduced.reduced_input)

    disp_block = phi
    acc_k = -phi @ mk
    acc_c = -phi @ mc
    acc_d = phi @ ms

    q = layout.n_channels
    c = np.zeros((q, 2 * n_r))
    d = np.zeros((q, l))
    for row, (kind, dof) in enumerate(layout.channels):
        if kind == "displacement":
            c[row, :n_r] = disp_block[dof]
        elif kind == "velocity":
            c[row, n_r:] = disp_block[dof]
        else:  # acceleration
            c[row, :n_r] = acc_k[dof]
            c[row, n_r:] = acc_c[dof]
            d[row] = acc_d[dof]
    return c, d


def assemble_error_matrix(dss: DiscreteStateSpace) -> np.ndarray:
    """G = C B + D, freshly assembled from the stored matrices."""
    return dss.C @ dss.B + dss.D


def assemble_system(
    model: StructuralModel,
    layout: SensorLayout,
    n_r: int,
    dt: float,
    process_noise=0.0,
    measurement_noise=1e-12,
) -> AssembledSystem:
    """Run the full model chain for one sensor layout.

    ``process_noise`` is a scalar (Q = q I) or full matrix;
    ``measurement_noise`` is a per-channel standard deviation (scalar or
    vector, R = diag(std^2)) or a full matrix. R must end up positive
    definite, so pass a small positive floor for noise-free studies.
    """
    reduced = modal_reduce(model, n_r)
    css = assemble_continuous(reduced)
    a, b = discretize(css, dt)
    c, d = output_matrices(reduced, layout)

    n = 2 * n_r
    qn = np.asarray(process_noise, dtype=float)
    qmat = float(qn) * np.eye(n) if qn.ndim == 0 else qn
    rn = np.asarray(measurement_noise, dtype=float)
    if rn.ndim == 2:
        rmat = rn
    else:
        std = np.broadcast_to(np.atleast_1d(rn), (layout.n_channels,))
        rmat = np.diag(std.astype(float) ** 2)

    dss = DiscreteStateSpace(A=a, B=b, C=c, D=d, dt=float(dt), Q=qmat, R=rmat)
    return AssembledSystem(model, reduced, css, dss, layout)
