import numpy as np
import pytest

from jise.errors import InvalidParameterError
from jise.model import (
    DiscreteStateSpace,
    SensorLayout,
    assemble_continuous,
    assemble_error_matrix,
    assemble_system,
    build_shear_frame,
    discretize,
    modal_reduce,
    natural_frequencies,
)

from conftest import DAMPING, FLOOR_MASS, FLOOR_STIFFNESS


def uniform_frame_frequencies(n, mass, stiff):
    """Closed-form natural frequencies of a uniform shear building (Hz)."""
    j = np.arange(1, n + 1)
    return 2.0 * np.sqrt(stiff / mass) * np.sin((2 * j - 1) * np.pi / (2 * (2 * n + 1))) / (2 * np.pi)


class TestBuildShearFrame:
    def test_single_storey_identity(self):
        model = build_shear_frame([1.0], [1.0], damping_ratios=[0.0])
        assert np.array_equal(model.mass_matrix, [[1.0]])
        assert np.array_equal(model.stiffness_matrix, [[1.0]])
        assert np.array_equal(model.damping_matrix, [[0.0]])

    def test_five_storey_lab_frame(self, frame5):
        assert frame5.n_dof == 5
        k = FLOOR_STIFFNESS
        assert frame5.stiffness_matrix[0, 0] == pytest.approx(2 * k)
        assert frame5.stiffness_matrix[4, 4] == pytest.approx(k)
        assert frame5.stiffness_matrix[0, 1] == pytest.approx(-k)
        assert np.all(np.diag(frame5.mass_matrix) == FLOOR_MASS)
        # ground-motion input distribution is -M @ 1
        assert np.allclose(frame5.input_distribution[:, 0], -FLOOR_MASS)

    def test_uniform_frame_matches_closed_form(self, frame5):
        freqs = natural_frequencies(frame5)
        expected = uniform_frame_frequencies(5, FLOOR_MASS, FLOOR_STIFFNESS)
        assert np.allclose(freqs, expected, rtol=1e-6)
        assert freqs[0] == pytest.approx(1.774, abs=5e-4)

    def test_modal_damping_ratios_recovered(self, frame5):
        reduced = modal_reduce(frame5, 5)
        omega = np.sqrt(np.diag(reduced.reduced_stiffness))
        zeta = np.diag(reduced.reduced_damping) / (2.0 * omega)
        assert np.allclose(zeta, DAMPING, rtol=1e-9)

    def test_rayleigh_damping(self):
        model = build_shear_frame([1.0, 1.0], [10.0, 10.0], rayleigh=(0.5, 0.01))
        expected = 0.5 * model.mass_matrix + 0.01 * model.stiffness_matrix
        assert np.allclose(model.damping_matrix, expected)

    def test_point_force_inputs(self):
        model = build_shear_frame([1.0] * 3, [5.0] * 3, damping_ratios=[0.0] * 3,
                                  inputs=[1, 2])
        assert model.n_inputs == 2
        assert np.array_equal(model.input_distribution,
                              [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    @pytest.mark.parametrize("masses,stiff", [([0.0], [1.0]), ([1.0], [-2.0]), ([], [])])
    def test_invalid_parameters(self, masses, stiff):
        with pytest.raises(InvalidParameterError):
            build_shear_frame(masses, stiff, damping_ratios=[0.0] * len(masses))


class TestModalReduce:
    def test_single_dof_mass_normalization(self):
        model = build_shear_frame([4.0], [9.0], damping_ratios=[0.0])
        reduced = modal_reduce(model, 1)
        assert reduced.modal_matrix[0, 0] == pytest.approx(0.5)  # 1/sqrt(m)
        assert reduced.reduced_mass[0, 0] == pytest.approx(1.0)

    def test_full_reduction_diagonalizes(self, frame5):
        reduced = modal_reduce(frame5, 5)
        for mat in (reduced.reduced_mass, reduced.reduced_damping, reduced.reduced_stiffness):
            off = mat - np.diag(np.diag(mat))
            assert np.max(np.abs(off)) <= 1e-8 * np.max(np.abs(mat))
        # reduced stiffness equals squared circular frequencies (dense eigensolve oracle)
        lam = np.linalg.eigvals(np.linalg.solve(frame5.mass_matrix, frame5.stiffness_matrix))
        assert np.allclose(np.sort(np.diag(reduced.reduced_stiffness)), np.sort(lam.real))

    def test_partial_reduction_is_leading_block(self, frame5):
        full = modal_reduce(frame5, 5)
        part = modal_reduce(frame5, 3)
        assert np.allclose(part.modal_matrix, full.modal_matrix[:, :3])
        assert np.allclose(part.reduced_stiffness, full.reduced_stiffness[:3, :3])
        assert np.allclose(part.reduced_damping, full.reduced_damping[:3, :3])

    def test_order_bounds(self, frame5):
        with pytest.raises(InvalidParameterError):
            modal_reduce(frame5, 6)
        with pytest.raises(InvalidParameterError):
            modal_reduce(frame5, 0)


class TestContinuousAssembly:
    def test_unit_blocks(self):
        model = build_shear_frame([1.0], [1.0], damping_ratios=[0.0])
        css = assemble_continuous(modal_reduce(model, 1))
        assert np.allclose(css.state_matrix, [[0.0, 1.0], [-1.0, 0.0]])
        assert np.allclose(css.input_matrix, [[0.0], [-1.0]])  # ground input -M i -> -1

    def test_block_structure(self, frame5):
        css = assemble_continuous(modal_reduce(frame5, 5))
        assert np.array_equal(css.state_matrix[:5, :5], np.zeros((5, 5)))
        assert np.array_equal(css.state_matrix[:5, 5:], np.eye(5))

    def test_eigenvalues_match_modes(self, frame5):
        css = assemble_continuous(modal_reduce(frame5, 5))
        eig = np.linalg.eigvals(css.state_matrix)
        freqs = np.sort(np.abs(eig.imag))[::2] / (2 * np.pi)  # conjugate pairs
        undamped = natural_frequencies(frame5)
        # light damping perturbs the imaginary part by O(zeta^2)
        assert np.allclose(np.sort(freqs), undamped, rtol=1e-3)

    def test_zero_damping_pure_imaginary(self):
        model = build_shear_frame([1.0] * 3, [5.0] * 3, damping_ratios=[0.0] * 3)
        css = assemble_continuous(modal_reduce(model, 3))
        eig = np.linalg.eigvals(css.state_matrix)
        assert np.max(np.abs(eig.real)) < 1e-10


class TestDiscretize:
    def test_zero_state_matrix_series_limit(self):
        css_like = type("css", (), {})()
        from jise.model import ContinuousStateSpace

        css = ContinuousStateSpace(np.zeros((2, 2)), np.array([[1.0], [2.0]]))
        a, b = discretize(css, 0.5)
        assert np.allclose(a, np.eye(2))
        assert np.allclose(b, [[0.5], [1.0]])  # B dt

    def test_scalar_closed_form(self):
        from jise.model import ContinuousStateSpace

        css = ContinuousStateSpace(np.array([[-1.0]]), np.array([[1.0]]))
        a, b = discretize(css, 1.0)
        assert a[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-15)
        assert b[0, 0] == pytest.approx(1.0 - np.exp(-1.0), abs=1e-15)

    def test_sdof_taylor_series_oracle(self):
        model = build_shear_frame([1.0], [(2 * np.pi) ** 2], damping_ratios=[0.0])
        css = assemble_continuous(modal_reduce(model, 1))
        a, b = discretize(css, 0.01)
        series = np.eye(2)
        term = np.eye(2)
        for j in range(1, 30):
            term = term @ (css.state_matrix * 0.01) / j
            series = series + term
        assert np.max(np.abs(a - series)) < 1e-12
        b_ref = (a - np.eye(2)) @ np.linalg.solve(css.state_matrix, css.input_matrix)
        assert np.max(np.abs(b - b_ref)) < 1e-12

    def test_stability_for_damped_systems(self, frame5):
        css = assemble_continuous(modal_reduce(frame5, 5))
        a, _ = discretize(css, 0.01)
        assert np.max(np.abs(np.linalg.eigvals(a))) < 1.0

    def test_rejects_bad_dt(self, frame5):
        css = assemble_continuous(modal_reduce(frame5, 5))
        with pytest.raises(InvalidParameterError):
            discretize(css, 0.0)


class TestOutputMatrices:
    def test_displacement_only_has_no_feedthrough(self, frame5):
        system = assemble_system(frame5, SensorLayout((("d", 0), ("d", 3))),
                                 n_r=5, dt=0.01)
        assert np.array_equal(system.dss.D, np.zeros((2, 1)))

    def test_acceleration_feedthrough_rows(self, frame5):
        reduced = modal_reduce(frame5, 5)
        from jise.model import output_matrices

        c, d = output_matrices(reduced, SensorLayout((("a", 2),)))
        ms = np.linalg.solve(reduced.reduced_mass, reduced.reduced_input)
        expected = (reduced.modal_matrix @ ms)[2]
        assert np.allclose(d[0], expected)

    def test_config1_rank(self, frame5):
        # displacement F1, accelerations F2/F4, ground-motion input
        system = assemble_system(
            frame5, SensorLayout((("d", 0), ("a", 1), ("a", 3))), n_r=5, dt=0.01
        )
        assert np.linalg.matrix_rank(system.dss.D) == 1
        assert np.linalg.matrix_rank(system.dss.G) == 1

    def test_row_count_matches_channels(self, frame5):
        layout = SensorLayout((("d", 0), ("v", 2), ("a", 4), ("a", 1)))
        system = assemble_system(frame5, layout, n_r=4, dt=0.01)
        assert system.dss.C.shape[0] == 4
        assert system.dss.D.shape[0] == 4

    def test_layout_bounds_checked(self, frame5):
        with pytest.raises(InvalidParameterError):
            assemble_system(frame5, SensorLayout((("d", 5),)), n_r=5, dt=0.01)


class TestDiscreteStateSpace:
    def test_error_matrix_assembled(self, frame5):
        system = assemble_system(
            frame5, SensorLayout((("d", 0), ("a", 1))), n_r=5, dt=0.01
        )
        dss = system.dss
        assert np.array_equal(dss.G, dss.C @ dss.B + dss.D)
        assert np.array_equal(assemble_error_matrix(dss), dss.G)

    def test_error_matrix_cases(self):
        a = np.eye(2) * 0.5
        c = np.array([[1.0, 0.0]])
        dss = DiscreteStateSpace(
            A=a, B=np.zeros((2, 1)), C=c, D=np.array([[3.0]]),
            dt=0.1, Q=np.zeros((2, 2)), R=np.eye(1),
        )
        assert np.array_equal(dss.G, [[3.0]])  # B = 0 -> G = D
        dss2 = DiscreteStateSpace(
            A=a, B=np.array([[1.0], [1.0]]), C=c, D=np.zeros((1, 1)),
            dt=0.1, Q=np.zeros((2, 2)), R=np.eye(1),
        )
        assert np.array_equal(dss2.G, dss2.C @ dss2.B)  # D = 0 -> G = C B

    def test_rejects_indefinite_R(self):
        with pytest.raises(InvalidParameterError):
            DiscreteStateSpace(
                A=np.eye(1), B=np.eye(1), C=np.eye(1), D=np.zeros((1, 1)),
                dt=0.1, Q=np.zeros((1, 1)), R=np.zeros((1, 1)),
            )

    def test_q_r_hygiene(self, frame5):
        system = assemble_system(
            frame5, SensorLayout((("d", 0), ("a", 1))), n_r=5, dt=0.01,
            process_noise=1e-6, measurement_noise=[1e-3, 2e-3],
        )
        dss = system.dss
        assert np.max(np.abs(dss.Q - dss.Q.T)) < 1e-12
        assert np.max(np.abs(dss.R - dss.R.T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(dss.R)) > 0


def test_full_order_reduction_reproduces_direct_integration(frame5):
    """Modal full-order propagation equals direct physical-space integration."""
    from jise.sim import generate_ground_motion, simulate_truth

    system = assemble_system(frame5, SensorLayout((("d", 0),)), n_r=5, dt=0.01)
    scenario = generate_ground_motion(3.0, 0.01, seed=4, rms=1.0)
    truth = simulate_truth(system, scenario)

    # direct integration of the physical second-order system by the same
    # exact exponential map, without the modal projection
    m_inv = np.linalg.inv(frame5.mass_matrix)
    a_phys = np.block([
        [np.zeros((5, 5)), np.eye(5)],
        [-m_inv @ frame5.stiffness_matrix, -m_inv @ frame5.damping_matrix],
    ])
    b_phys = np.vstack([np.zeros((5, 1)), m_inv @ frame5.input_distribution])
    import scipy.linalg

    a_d = scipy.linalg.expm(a_phys * 0.01)
    b_d = (a_d - np.eye(10)) @ np.linalg.solve(a_phys, b_phys)
    x = np.zeros(10)
    for k in range(1, truth.times.size):
        x = a_d @ x + b_d @ scenario.input_series[k]
    scale = np.max(np.abs(truth.physical_disp))
    assert np.max(np.abs(truth.physical_disp[-1] - x[:5])) < 1e-8 * scale
    assert np.max(np.abs(truth.physical_vel[-1] - x[5:])) < 1e-8 * scale
