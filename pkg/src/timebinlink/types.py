"""Domain value types shared across the simulator and analysis modules.

Everything here is an immutable dataclass validated on construction, so
downstream code can assume in-range fields.  All interface angles are in
degrees, times in seconds, frequencies in Hz; conversions to radians/kg
happen internally.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

AXES = ("z", "x", "y")  # canonical axis order for all per-mode products
IONS = ("A", "B")  # canonical ion order


class DomainError(ValueError):
    """A value violates one of the documented domain invariants."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


@dataclass(frozen=True)
class EmitterSpec:
    """Single-photon emitter constants of one ion.

    ``branch_sigma`` is the probability that an excitation produces a
    usable collected-polarization photon returning the ion to the qubit
    ground state; ``branch_pi`` covers decay to the wrong ground state
    (photon blocked by a polarizer with efficiency ``pol_rejection``);
    ``branch_d`` covers decay out of the cycling manifold (photon
    spectrally rejected).
    """

    mass_kg: float
    wavelength_m: float
    tau_r_s: float
    p_exc: float
    branch_sigma: float
    branch_pi: float
    branch_d: float
    pol_rejection: float

    def __post_init__(self) -> None:
        for name in ("mass_kg", "wavelength_m", "tau_r_s"):
            _check(getattr(self, name) > 0, f"EmitterSpec.{name} must be positive")
        for name in ("p_exc", "pol_rejection"):
            v = getattr(self, name)
            _check(0.0 <= v <= 1.0, f"EmitterSpec.{name} must be in [0, 1]")
        for name in ("branch_sigma", "branch_pi", "branch_d"):
            _check(getattr(self, name) >= 0, f"EmitterSpec.{name} must be nonnegative")
        total = self.branch_sigma + self.branch_pi + self.branch_d
        _check(abs(total - 1.0) < 1e-9, f"branching ratios must sum to 1, got {total!r}")

    @property
    def k(self) -> float:
        """Photon wavevector magnitude [rad/m]."""
        return 2.0 * math.pi / self.wavelength_m

    @property
    def gamma(self) -> float:
        """Radiative decay rate 1/tau_R [rad/s]."""
        return 1.0 / self.tau_r_s


@dataclass(frozen=True)
class BeamGeometry:
    """Orientation of the excitation/cooling beam and the emission direction.

    ``alpha_deg`` is the angle between the emission direction and the
    trap's principal x axis; ``beam_tilt_deg`` the angle between the
    excitation/cooling beam and the axial z axis.
    """

    alpha_deg: float
    beam_tilt_deg: float

    def __post_init__(self) -> None:
        for name in ("alpha_deg", "beam_tilt_deg"):
            v = getattr(self, name)
            _check(0.0 <= v < 180.0, f"BeamGeometry.{name} must be in [0, 180)")


@dataclass(frozen=True)
class AnglePair:
    """Beam angles for one principal axis: excitation (theta) and emission (psi)."""

    theta_deg: float
    psi_deg: float

    def __post_init__(self) -> None:
        _check(0.0 <= self.theta_deg <= 180.0, "theta_deg must be in [0, 180]")
        _check(0.0 <= self.psi_deg <= 180.0, "psi_deg must be in [0, 180]")


@dataclass(frozen=True)
class AxisAngles:
    """Per-axis beam angles, derived deterministically from a BeamGeometry."""

    x: AnglePair
    y: AnglePair
    z: AnglePair

    def pair(self, axis: str) -> AnglePair:
        return getattr(self, axis)


@dataclass(frozen=True)
class TrapMode:
    """One motional normal mode of one ion."""

    ion: str
    axis: str
    freq_hz: float
    nbar: float
    eta: float
    zeta: float

    def __post_init__(self) -> None:
        _check(self.ion in IONS, f"TrapMode.ion must be one of {IONS}")
        _check(self.axis in AXES, f"TrapMode.axis must be one of {AXES}")
        _check(self.freq_hz > 0, "TrapMode.freq_hz must be positive")
        _check(self.nbar >= 0, "TrapMode.nbar must be nonnegative")
        _check(self.eta >= 0 and self.zeta >= 0, "Lamb-Dicke parameters must be nonnegative")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.freq_hz


@dataclass(frozen=True)
class CollectionChain:
    """Photon collection and detection efficiencies of one node."""

    eps_fiber: float
    transmission: float
    eps_det: float
    solid_angle_frac: float

    def __post_init__(self) -> None:
        for name in ("eps_fiber", "transmission", "eps_det", "solid_angle_frac"):
            v = getattr(self, name)
            _check(0.0 <= v <= 1.0, f"CollectionChain.{name} must be in [0, 1]")

    @property
    def efficiency(self) -> float:
        """Product of the chain factors excluding emitter physics."""
        return self.eps_fiber * self.transmission * self.eps_det * self.solid_angle_frac


@dataclass(frozen=True)
class ProtocolParams:
    """Timing parameters of the two-bin herald protocol."""

    tau_s: float
    delta_t_s: float
    rep_rate_hz: float = 70e3
    duty: float = 1.0

    def __post_init__(self) -> None:
        _check(self.tau_s > 0, "ProtocolParams.tau_s must be positive")
        _check(self.delta_t_s >= 0, "ProtocolParams.delta_t_s must be nonnegative")
        _check(self.rep_rate_hz > 0, "ProtocolParams.rep_rate_hz must be positive")
        _check(0.0 <= self.duty <= 1.0, "ProtocolParams.duty must be in [0, 1]")


@dataclass(frozen=True)
class WindowStats:
    """Acceptance-window statistics: relative size w, scaled variance W, yield Y."""

    w: float
    big_w: float
    yield_y: float


@dataclass(frozen=True)
class CoherenceReport:
    """Contrast factors of the heralded Bell state and per-mode phase offsets."""

    c_timebin: float
    c_arrival: float
    c_total: float
    phase_offsets: tuple[float, ...]


@dataclass(frozen=True)
class NodeSpec:
    """One ion-trap node: emitter, beam geometry, collection chain, three modes.

    ``modes`` follow the canonical z, x, y axis order.
    """

    name: str
    emitter: EmitterSpec
    geometry: BeamGeometry
    chain: CollectionChain
    modes: tuple[TrapMode, TrapMode, TrapMode]

    def __post_init__(self) -> None:
        _check(self.name in IONS, f"NodeSpec.name must be one of {IONS}")
        axes = tuple(m.axis for m in self.modes)
        _check(axes == AXES, f"NodeSpec.modes must follow axis order {AXES}, got {axes}")
        _check(all(m.ion == self.name for m in self.modes), "mode.ion must match node name")


class HeraldKind(enum.Enum):
    PSI_PLUS = "psi_plus"
    PSI_MINUS = "psi_minus"
    REJECTED = "rejected"
    ERASURE_FLAGGED = "erasure_flagged"


class RejectReason(enum.Enum):
    SAME_BIN = "same-bin"
    MISSING_PHOTON = "missing-photon"
    OUT_OF_WINDOW = "out-of-window"


@dataclass(frozen=True)
class HeraldResult:
    """Classification of one entanglement attempt."""

    kind: HeraldKind
    reason: Optional[RejectReason] = None

    def __post_init__(self) -> None:
        if self.kind is HeraldKind.REJECTED:
            _check(self.reason is not None, "Rejected herald needs a reason")
        else:
            _check(self.reason is None, "only Rejected heralds carry a reason")

    @property
    def accepted(self) -> bool:
        return self.kind in (HeraldKind.PSI_PLUS, HeraldKind.PSI_MINUS)


PSI_PLUS = HeraldResult(HeraldKind.PSI_PLUS)
PSI_MINUS = HeraldResult(HeraldKind.PSI_MINUS)
ERASURE_FLAGGED = HeraldResult(HeraldKind.ERASURE_FLAGGED)


def rejected(reason: RejectReason) -> HeraldResult:
    return HeraldResult(HeraldKind.REJECTED, reason)


def mode_order(modes) -> list[TrapMode]:
    """Sort modes into the canonical, documented product order: ion A then B,
    axes z, x, y within each ion.  Guarantees bit-reproducible products."""
    return sorted(modes, key=lambda m: (IONS.index(m.ion), AXES.index(m.axis)))
