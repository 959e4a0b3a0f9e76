"""Desk-scale simulator and analysis toolkit for heralded remote entanglement
of trapped-ion memories mediated by time-bin photonic qubits."""

from .types import (
    AnglePair,
    AxisAngles,
    BeamGeometry,
    CoherenceReport,
    CollectionChain,
    DomainError,
    EmitterSpec,
    HeraldKind,
    HeraldResult,
    NodeSpec,
    ProtocolParams,
    RejectReason,
    TrapMode,
    WindowStats,
)
from .physics import (
    bell_fidelity,
    coherence_report,
    collection_prob,
    commensurability,
    contrast_arrival,
    contrast_timebin,
    derive_beam_angles,
    doppler_nbar,
    double_emission_prob,
    recoil_params,
    success_prob_and_rate,
    window_stats,
)
from .config import ConfigError, RunConfig, load_config, reference_config

__version__ = "0.1.0"

__all__ = [
    "AnglePair",
    "AxisAngles",
    "BeamGeometry",
    "CoherenceReport",
    "CollectionChain",
    "ConfigError",
    "DomainError",
    "EmitterSpec",
    "HeraldKind",
    "HeraldResult",
    "NodeSpec",
    "ProtocolParams",
    "RejectReason",
    "RunConfig",
    "TrapMode",
    "WindowStats",
    "bell_fidelity",
    "coherence_report",
    "collection_prob",
    "commensurability",
    "contrast_arrival",
    "contrast_timebin",
    "derive_beam_angles",
    "doppler_nbar",
    "double_emission_prob",
    "load_config",
    "reference_config",
    "recoil_params",
    "success_prob_and_rate",
    "window_stats",
]
