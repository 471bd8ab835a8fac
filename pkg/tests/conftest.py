import numpy as np
import pytest

from jise.model import SensorLayout, assemble_system, build_shear_frame

# laboratory-scale 5-storey frame used across the suite
FLOOR_MASS = 8.083
FLOOR_STIFFNESS = 1.24e4
DAMPING = (0.016, 0.014, 0.016, 0.017, 0.016)


@pytest.fixture(scope="session")
def frame5():
    return build_shear_frame(
        [FLOOR_MASS] * 5, [FLOOR_STIFFNESS] * 5, damping_ratios=list(DAMPING)
    )


@pytest.fixture(scope="session")
def frame2():
    return build_shear_frame([1.0, 1.2], [400.0, 300.0], damping_ratios=[0.03, 0.04],
                             inputs=[1])


def make_system(frame, channels, n_r=None, dt=0.01, q=0.0, noise_std=1.0):
    layout = SensorLayout(tuple(channels))
    n_r = frame.n_dof if n_r is None else n_r
    return assemble_system(
        frame, layout, n_r=n_r, dt=dt, process_noise=q, measurement_noise=noise_std
    )


def assert_covariance_hygiene(p, tol=1e-10):
    """Symmetry within 1e-10 and eigenvalues above -1e-10 (scale-relative)."""
    p = np.asarray(p)
    scale = max(float(np.max(np.abs(p))), 1.0)
    assert np.max(np.abs(p - p.T)) <= tol * scale
    assert float(np.min(np.linalg.eigvalsh(0.5 * (p + p.T)))) >= -tol * scale
