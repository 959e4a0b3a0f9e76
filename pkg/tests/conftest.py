import pytest

from timebinlink.config import reference_config


@pytest.fixture(scope="session")
def ref_cfg():
    return reference_config()


# Table of the six modes of the reference apparatus:
# (ion, axis, freq_kHz, theta_deg, psi_deg, eta, zeta, nbar, cycles_per_bin)
REFERENCE_MODE_TABLE = [
    ("A", "z", 991.5, 135.0, 90.0, 0.055, 0.0, 13, 5.996),
    ("A", "x", 1157.5, 120.0, 45.0, 0.086, 0.051, 15, 7.000),
    ("A", "y", 1488.0, 60.0, 45.0, 0.013, 0.045, 12, 8.999),
    ("B", "z", 330.3, 135.0, 90.0, 0.095, 0.0, 38, 1.997),
    ("B", "x", 826.7, 134.8, 85.5, 0.066, 0.0067, 15, 4.999),
    ("B", "y", 992.0, 86.8, 4.5, 0.073, 0.077, 826, 5.999),
]

TAU_S = 6048e-9
TAU_R_S = 7.85e-9
