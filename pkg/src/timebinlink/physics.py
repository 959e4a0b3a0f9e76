"""Closed-form physics of the time-bin herald protocol.

Beam geometry to recoil parameters, Doppler cooling limits, detection-window
statistics, motional coherence/contrast factors, Bell fidelity, and the
success-probability/rate arithmetic.  All functions are pure and operate on
the immutable value types from :mod:`timebinlink.types`; products over modes
always run in the canonical order (ion A then B, axes z, x, y).
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .constants import HBAR
from .types import (
    AnglePair,
    AxisAngles,
    BeamGeometry,
    CoherenceReport,
    CollectionChain,
    DomainError,
    EmitterSpec,
    TrapMode,
    WindowStats,
    mode_order,
)


class UncooledAxisError(DomainError):
    """The cooling beam is orthogonal to the axis; the Doppler limit diverges."""


def derive_beam_angles(geom: BeamGeometry) -> AxisAngles:
    """Derive the per-axis excitation (theta) and emission (psi) angles.

    The excitation/cooling beam lies at ``beam_tilt`` to the axial z axis and
    the emission direction is perpendicular to z at ``alpha`` to the x axis,
    which fixes, per principal axis i::

        cos(theta_x) = -sin(tilt) sin(alpha)    cos(psi_x) = cos(alpha)
        cos(theta_y) =  sin(tilt) cos(alpha)    cos(psi_y) = sin(alpha)
        cos(theta_z) = -cos(tilt)               cos(psi_z) = 0

    so the emission angle to z is always 90 degrees.
    """
    a = math.radians(geom.alpha_deg)
    b = math.radians(geom.beam_tilt_deg)

    def ang(c: float) -> float:
        return math.degrees(math.acos(max(-1.0, min(1.0, c))))

    return AxisAngles(
        x=AnglePair(theta_deg=ang(-math.sin(b) * math.sin(a)), psi_deg=ang(math.cos(a))),
        y=AnglePair(theta_deg=ang(math.sin(b) * math.cos(a)), psi_deg=ang(math.sin(a))),
        z=AnglePair(theta_deg=ang(-math.cos(b)), psi_deg=90.0),
    )


def recoil_scale(freq_hz: float, emitter: EmitterSpec) -> float:
    """sqrt(hbar k^2 / (2 m omega)): recoil momentum relative to the
    zero-point momentum spread at secular frequency ``freq_hz``."""
    if freq_hz <= 0:
        raise DomainError("mode frequency must be positive")
    omega = 2.0 * math.pi * freq_hz
    return math.sqrt(HBAR * emitter.k**2 / (2.0 * emitter.mass_kg * omega))


def recoil_params(freq_hz: float, angles: AnglePair, emitter: EmitterSpec) -> tuple[float, float]:
    """Lamb-Dicke parameters of one mode.

    ``eta`` is taken with respect to the excitation-emission wavevector
    difference, ``zeta`` with respect to the emission wavevector alone::

        eta  = sqrt(hbar k^2 / 2 m omega) * |cos(psi) - cos(theta)|
        zeta = sqrt(hbar k^2 / 2 m omega) * |cos(psi)|
    """
    s = recoil_scale(freq_hz, emitter)
    ct = math.cos(math.radians(angles.theta_deg))
    cp = math.cos(math.radians(angles.psi_deg))
    return s * abs(cp - ct), s * abs(cp)


def doppler_nbar(
    freq_hz: float,
    theta_deg: float,
    gamma_rad_s: float,
    detuning_rad_s: float | None = None,
    sat_s: float = 1.0,
) -> float:
    """Doppler cooling limit of one mode.

    nbar = (gamma / 4 omega) [Delta/gamma + gamma(1+s)/(4 Delta)]
           * (1 + 1/(3 cos^2 theta))

    ``detuning_rad_s`` defaults to gamma/2 and ``sat_s`` to 1, which
    reproduce the reference operating point; both are exposed because the
    beams in practice run near Delta ~ gamma/2, s ~ 2.  A beam orthogonal
    to the axis (theta = 90 deg) cannot cool it and raises
    :class:`UncooledAxisError`.
    """
    if freq_hz <= 0 or gamma_rad_s <= 0 or sat_s < 0:
        raise DomainError("rates must be positive")
    if detuning_rad_s is None:
        detuning_rad_s = gamma_rad_s / 2.0
    if detuning_rad_s <= 0:
        raise DomainError("detuning must be positive")
    ct = math.cos(math.radians(theta_deg))
    if abs(ct) < 1e-12:
        raise UncooledAxisError(f"uncooled axis: theta = {theta_deg} deg")
    omega = 2.0 * math.pi * freq_hz
    rate_term = detuning_rad_s / gamma_rad_s + gamma_rad_s * (1.0 + sat_s) / (4.0 * detuning_rad_s)
    geometry_term = 1.0 + 1.0 / (3.0 * ct * ct)
    return gamma_rad_s / (4.0 * omega) * rate_term * geometry_term


def _big_w_small(w: float) -> float:
    # Cancellation-free branch: 1-(1+w+w^2/2)e^-w = e^-w * sum_{k>=3} w^k/k!
    term = w**3 / 6.0
    total = term
    k = 3
    while True:
        k += 1
        term *= w / k
        total += term
        if term <= 1e-18 * total:
            break
    return total * math.exp(-w) / (-math.expm1(-w))


def window_stats(delta_t_s: float, tau_r_s: float) -> WindowStats:
    """Acceptance statistics of the detection window |tau* - tau| <= delta_t.

    With w = delta_t/tau_R: yield Y = 1 - e^-w, and the scaled variance of
    the accepted arrival-time difference W = [1-(1+w+w^2/2)e^-w]/(1-e^-w),
    rising smoothly from 0 to 1.  W(0) is the w->0 limit, taken explicitly;
    a series branch keeps small w free of cancellation.
    """
    if delta_t_s < 0:
        raise DomainError("delta_t_s must be nonnegative")
    if tau_r_s <= 0:
        raise DomainError("tau_r_s must be positive")
    w = delta_t_s / tau_r_s
    if w == 0.0:
        return WindowStats(w=0.0, big_w=0.0, yield_y=0.0)
    y = -math.expm1(-w)
    if w < 0.5:
        big_w = _big_w_small(w)
    else:
        big_w = (1.0 - (1.0 + w + w * w / 2.0) * math.exp(-w)) / y
    return WindowStats(w=w, big_w=big_w, yield_y=y)


def contrast_timebin(modes: Iterable[TrapMode], tau_s: float) -> tuple[float, tuple[float, ...]]:
    """Coherence surviving the time-bin separation tau.

    C' = prod_i exp[-eta_i^2 (2 nbar_i + 1)(1 - cos(omega_i tau))], with a
    per-mode zero-point phase offset eta_i^2 sin(omega_i tau).  Equal to 1
    exactly when every omega_i*tau is an integer multiple of 2*pi.
    """
    ordered = mode_order(modes)
    if not ordered:
        raise DomainError("need at least one mode")
    exponent = 0.0
    phases = []
    for m in ordered:
        phi = m.omega * tau_s
        exponent += m.eta**2 * (2.0 * m.nbar + 1.0) * (1.0 - math.cos(phi))
        phases.append(m.eta**2 * math.sin(phi))
    return math.exp(-exponent), tuple(phases)


def contrast_arrival(modes: Iterable[TrapMode], tau_r_s: float, big_w: float) -> float:
    """Coherence surviving the random photon arrival times.

    Gaussian approximation for omega*tau_R << 1:
    C'' = prod_i exp[-zeta_i^2 (2 nbar_i + 1) W (omega_i tau_R)^2].
    """
    if not 0.0 <= big_w <= 1.0:
        raise DomainError("big_w must be in [0, 1]")
    exponent = 0.0
    for m in mode_order(modes):
        exponent += m.zeta**2 * (2.0 * m.nbar + 1.0) * big_w * (m.omega * tau_r_s) ** 2
    return math.exp(-exponent)


def coherence_report(
    modes: Sequence[TrapMode], tau_s: float, delta_t_s: float, tau_r_s: float
) -> CoherenceReport:
    """Combined contrast C = C' * C'' at the given bin separation and window."""
    c1, phases = contrast_timebin(modes, tau_s)
    c2 = contrast_arrival(modes, tau_r_s, window_stats(delta_t_s, tau_r_s).big_w)
    return CoherenceReport(c_timebin=c1, c_arrival=c2, c_total=c1 * c2, phase_offsets=phases)


def bell_fidelity(p_odd: float, contrast: float) -> float:
    """Bell-state fidelity F = (P_odd + C) / 2."""
    if not (0.0 <= p_odd <= 1.0 and 0.0 <= contrast <= 1.0):
        raise DomainError("p_odd and contrast must be in [0, 1]")
    return 0.5 * (p_odd + contrast)


def collection_prob(emitter: EmitterSpec, chain: CollectionChain) -> float:
    """Per-attempt probability that a node's photon is collected and detected:
    p_q = p_exc * beta * eps_F * T * eps_D * (dOmega/4pi)."""
    return emitter.p_exc * emitter.branch_sigma * chain.efficiency


def success_prob_and_rate(
    p_a: float, p_b: float, yield_y: float, rep_rate_hz: float, duty: float
) -> tuple[float, float]:
    """Herald success probability P_E = p_A p_B / 2 (the 1/2 rejects same-bin
    double collections) and the mean entanglement rate P_E * Y * R * f."""
    for name, v in (("p_a", p_a), ("p_b", p_b), ("yield_y", yield_y), ("duty", duty)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must be in [0, 1]")
    if rep_rate_hz < 0:
        raise DomainError("rep_rate_hz must be nonnegative")
    p_e = 0.5 * p_a * p_b
    return p_e, p_e * yield_y * rep_rate_hz * duty


def double_emission_prob(
    p_exc: float, branch_sigma: float, pulse_len_s: float, tau_r_s: float
) -> float:
    """Probability that one excitation pulse yields two emitted photons:
    P_exc^2 * beta^2 * t_p / (8 tau_R)."""
    if pulse_len_s < 0 or tau_r_s <= 0:
        raise DomainError("pulse length must be nonnegative, lifetime positive")
    return p_exc**2 * branch_sigma**2 * pulse_len_s / (8.0 * tau_r_s)


def commensurability(
    modes: Iterable[TrapMode], tau_s: float
) -> list[tuple[TrapMode, float, float]]:
    """Per mode: omega*tau/2pi and its distance to the nearest integer.

    Vanishing residuals mean each ion is excited from the same point of its
    secular orbit in both bins, cancelling the recoil which-path phase.
    """
    if tau_s <= 0:
        raise DomainError("tau_s must be positive")
    out = []
    for m in mode_order(modes):
        cycles = m.freq_hz * tau_s
        residual = abs(cycles - round(cycles))
        out.append((m, cycles, residual))
    return out
