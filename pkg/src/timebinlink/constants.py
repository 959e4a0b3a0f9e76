"""Physical constants (CODATA 2018) and unit helpers."""

import math

HBAR = 1.054571817e-34  # reduced Planck constant [J*s]
AMU = 1.66053906660e-27  # unified atomic mass unit [kg]


def amu_to_kg(mass_amu: float) -> float:
    return mass_amu * AMU


def wavevector(wavelength_m: float) -> float:
    """Optical wavevector magnitude k = 2*pi/lambda [rad/m]."""
    return 2.0 * math.pi / wavelength_m


def angular(freq_hz: float) -> float:
    """Angular frequency omega = 2*pi*f [rad/s]."""
    return 2.0 * math.pi * freq_hz
