"""Run configuration: TOML schema, validation, and resolution to domain types.

Every physical key carries its unit in the name (freq in kHz, times in ns,
angles in degrees, mass in amu).  Unknown keys are rejected with their path
so unit typos cannot pass silently.  Mode occupations default to the
Doppler-limit prediction from the node's own beam geometry and can be
overridden per mode.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

from .constants import amu_to_kg
from .montecarlo import NoiseParams, TomographyConfig, p_odd_model, static_contrast_model
from .physics import derive_beam_angles, doppler_nbar, recoil_params
from .types import (
    AXES,
    BeamGeometry,
    CollectionChain,
    DomainError,
    EmitterSpec,
    NodeSpec,
    ProtocolParams,
    TrapMode,
)


class ConfigError(ValueError):
    """Configuration file is malformed or violates a domain invariant."""


_NUM = (int, float)
_EMITTER_KEYS = {
    "mass_amu": _NUM,
    "wavelength_nm": _NUM,
    "tau_r_ns": _NUM,
    "p_exc": _NUM,
    "branch_sigma": _NUM,
    "branch_pi": _NUM,
    "branch_d": _NUM,
    "pol_rejection": _NUM,
}
_GEOMETRY_KEYS = {"alpha_deg": _NUM, "beam_tilt_deg": _NUM}
_CHAIN_KEYS = {"eps_fiber": _NUM, "transmission": _NUM, "eps_det": _NUM, "solid_angle_frac": _NUM}
_MODES_KEYS = {
    "z_khz": _NUM,
    "x_khz": _NUM,
    "y_khz": _NUM,
    "nbar_z": _NUM,
    "nbar_x": _NUM,
    "nbar_y": _NUM,
}
_NODE_KEYS = {
    "emitter": _EMITTER_KEYS,
    "geometry": _GEOMETRY_KEYS,
    "chain": _CHAIN_KEYS,
    "modes": _MODES_KEYS,
}
_SCHEMA: dict[str, Any] = {
    "protocol": {"tau_ns": _NUM, "delta_t_ns": _NUM, "rep_rate_khz": _NUM, "duty": _NUM},
    "node": {"A": _NODE_KEYS, "B": _NODE_KEYS},
    "noise": {
        "pulse_angle_rms_rad": _NUM,
        "dark_count_rate_hz": _NUM,
        "dark_gate_ns": _NUM,
        "mode_overlap": _NUM,
        "spam_error": _NUM,
        "drift_contrast": _NUM,
        "veto_enabled": bool,
        "veto_failure": _NUM,
    },
    "cooling": {"detuning_over_gamma": _NUM, "saturation": _NUM},
    "run": {"seed": int, "workers": int},
}
_REQUIRED_SECTIONS = ("protocol", "node")


def _walk(schema: dict, data: dict, path: str) -> None:
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a section")
            _walk(expected, value, here)
        else:
            if expected is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"{here} must be a boolean")
            elif expected is int:
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"{here} must be an integer")
            elif not isinstance(value, _NUM) or isinstance(value, bool):
                raise ConfigError(f"{here} must be a number")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of a run."""

    node_a: NodeSpec
    node_b: NodeSpec
    protocol: ProtocolParams
    noise: NoiseParams
    detuning_over_gamma: float
    saturation: float
    seed: int
    workers: int

    @property
    def modes(self) -> tuple[TrapMode, ...]:
        return tuple(self.node_a.modes) + tuple(self.node_b.modes)

    def p_odd(self) -> float:
        return p_odd_model(self.noise)

    def static_contrast(self) -> float:
        return static_contrast_model(self.noise)

    def tomography_config(self, sign: int) -> TomographyConfig:
        return TomographyConfig(
            sign=sign,
            p_odd=self.p_odd(),
            static_contrast=self.static_contrast(),
            modes=self.modes,
            tau_s=self.protocol.tau_s,
            tau_r_s=self.node_a.emitter.tau_r_s,
            delta_t_s=self.protocol.delta_t_s,
            rep_rate_hz=self.protocol.rep_rate_hz,
        )

    def describe(self) -> dict:
        """JSON-ready echo of the resolved configuration."""

        def node(n: NodeSpec) -> dict:
            return {
                "emitter": {
                    "mass_kg": n.emitter.mass_kg,
                    "wavelength_m": n.emitter.wavelength_m,
                    "tau_r_s": n.emitter.tau_r_s,
                    "p_exc": n.emitter.p_exc,
                    "branch_sigma": n.emitter.branch_sigma,
                    "branch_pi": n.emitter.branch_pi,
                    "branch_d": n.emitter.branch_d,
                    "pol_rejection": n.emitter.pol_rejection,
                },
                "geometry": {
                    "alpha_deg": n.geometry.alpha_deg,
                    "beam_tilt_deg": n.geometry.beam_tilt_deg,
                },
                "chain": {
                    "eps_fiber": n.chain.eps_fiber,
                    "transmission": n.chain.transmission,
                    "eps_det": n.chain.eps_det,
                    "solid_angle_frac": n.chain.solid_angle_frac,
                },
                "modes": {
                    m.axis: {
                        "freq_hz": m.freq_hz,
                        "nbar": m.nbar,
                        "eta": m.eta,
                        "zeta": m.zeta,
                    }
                    for m in n.modes
                },
            }

        return {
            "node": {"A": node(self.node_a), "B": node(self.node_b)},
            "protocol": {
                "tau_s": self.protocol.tau_s,
                "delta_t_s": self.protocol.delta_t_s,
                "rep_rate_hz": self.protocol.rep_rate_hz,
                "duty": self.protocol.duty,
            },
            "noise": {
                "pulse_angle_rms_rad": self.noise.pulse_angle_rms_rad,
                "dark_count_rate_hz": self.noise.dark_count_rate_hz,
                "dark_gate_s": self.noise.dark_gate_s,
                "mode_overlap": self.noise.mode_overlap,
                "spam_error": self.noise.spam_error,
                "drift_contrast": self.noise.drift_contrast,
                "veto_enabled": self.noise.veto_enabled,
                "veto_failure": self.noise.veto_failure,
            },
            "cooling": {
                "detuning_over_gamma": self.detuning_over_gamma,
                "saturation": self.saturation,
            },
            "run": {"seed": self.seed, "workers": self.workers},
        }


def _build_node(
    name: str, section: dict, detuning_over_gamma: float, saturation: float
) -> NodeSpec:
    for part in ("emitter", "geometry", "chain", "modes"):
        if part not in section:
            raise ConfigError(f"node.{name} is missing the [{part}] section")
    em = section["emitter"]
    emitter = EmitterSpec(
        mass_kg=amu_to_kg(em["mass_amu"]),
        wavelength_m=em["wavelength_nm"] * 1e-9,
        tau_r_s=em["tau_r_ns"] * 1e-9,
        p_exc=em["p_exc"],
        branch_sigma=em["branch_sigma"],
        branch_pi=em["branch_pi"],
        branch_d=em["branch_d"],
        pol_rejection=em["pol_rejection"],
    )
    geometry = BeamGeometry(
        alpha_deg=section["geometry"]["alpha_deg"],
        beam_tilt_deg=section["geometry"]["beam_tilt_deg"],
    )
    chain = CollectionChain(** section["chain"])
    angles = derive_beam_angles(geometry)
    modes = []
    for axis in AXES:
        key = f"{axis}_khz"
        if key not in section["modes"]:
            raise ConfigError(f"node.{name}.modes.{key} is required")
        freq_hz = section["modes"][key] * 1e3
        pair = angles.pair(axis)
        eta, zeta = recoil_params(freq_hz, pair, emitter)
        nbar = section["modes"].get(f"nbar_{axis}")
        if nbar is None:
            nbar = doppler_nbar(
                freq_hz,
                pair.theta_deg,
                emitter.gamma,
                detuning_rad_s=detuning_over_gamma * emitter.gamma,
                sat_s=saturation,
            )
        modes.append(
            TrapMode(ion=name, axis=axis, freq_hz=freq_hz, nbar=float(nbar), eta=eta, zeta=zeta)
        )
    return NodeSpec(name=name, emitter=emitter, geometry=geometry, chain=chain, modes=tuple(modes))


def resolve_config(raw: dict) -> RunConfig:
    """Validate a parsed config mapping and resolve it to domain types."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _walk(_SCHEMA, raw, "")
    for sec in _REQUIRED_SECTIONS:
        if sec not in raw:
            raise ConfigError(f"missing required section [{sec}]")
    for node_name in ("A", "B"):
        if node_name not in raw["node"]:
            raise ConfigError(f"missing section [node.{node_name}]")

    cooling = raw.get("cooling", {})
    detuning_over_gamma = cooling.get("detuning_over_gamma", 0.5)
    saturation = cooling.get("saturation", 1.0)

    proto = raw["protocol"]
    for key in ("tau_ns", "delta_t_ns", "rep_rate_khz", "duty"):
        if key not in proto:
            raise ConfigError(f"protocol.{key} is required")

    noise_raw = dict(raw.get("noise", {}))
    dark_gate_ns = noise_raw.pop("dark_gate_ns", 100.0)
    try:
        noise = NoiseParams(dark_gate_s=dark_gate_ns * 1e-9, **noise_raw)
        protocol = ProtocolParams(
            tau_s=proto["tau_ns"] * 1e-9,
            delta_t_s=proto["delta_t_ns"] * 1e-9,
            rep_rate_hz=proto["rep_rate_khz"] * 1e3,
            duty=proto["duty"],
        )
        node_a = _build_node("A", raw["node"]["A"], detuning_over_gamma, saturation)
        node_b = _build_node("B", raw["node"]["B"], detuning_over_gamma, saturation)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc

    run = raw.get("run", {})
    return RunConfig(
        node_a=node_a,
        node_b=node_b,
        protocol=protocol,
        noise=noise,
        detuning_over_gamma=detuning_over_gamma,
        saturation=saturation,
        seed=run.get("seed", 0),
        workers=run.get("workers", 1),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return resolve_config(raw)


def reference_config(
    seed: Optional[int] = None, delta_t_ns: Optional[float] = None
) -> RunConfig:
    """The shipped reference configuration (the demonstration apparatus)."""
    from importlib import resources

    with resources.files("timebinlink").joinpath("data/reference.toml").open("rb") as fh:
        raw = tomllib.load(fh)
    if seed is not None:
        raw.setdefault("run", {})["seed"] = seed
    if delta_t_ns is not None:
        raw["protocol"]["delta_t_ns"] = delta_t_ns
    return resolve_config(raw)
