"""Design-space tools: bin-separation tuning, sweep curves, error budgeting,
end-to-end fidelity prediction.

Sweeps are deterministic functions of their configuration (no randomness),
so emitted curves are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

from .physics import (
    contrast_arrival,
    contrast_timebin,
    derive_beam_angles,
    doppler_nbar,
    recoil_params,
    window_stats,
)
from .types import DomainError, NodeSpec, TrapMode, mode_order


@dataclass(frozen=True)
class ErrorBudgetEntry:
    label: str
    fidelity_error: float
    bound_kind: str = "measured"  # "measured" | "upper-bound"

    def __post_init__(self) -> None:
        if not 0.0 <= self.fidelity_error <= 1.0:
            raise DomainError("fidelity_error must be in [0, 1]")
        if self.bound_kind not in ("measured", "upper-bound"):
            raise DomainError("bound_kind must be 'measured' or 'upper-bound'")


# Reference error budget of the demonstration apparatus.
REFERENCE_BUDGET: tuple[ErrorBudgetEntry, ...] = (
    ErrorBudgetEntry("SPAM / qubit-drive intensity fluctuations", 0.01, "measured"),
    ErrorBudgetEntry("Photon wavepacket overlap", 0.004, "measured"),
    ErrorBudgetEntry("Atom recoil, 10 ns window", 0.002, "measured"),
    ErrorBudgetEntry("Background counts", 0.002, "upper-bound"),
    ErrorBudgetEntry("Atom recoil, mode-frequency fluctuation", 0.001, "upper-bound"),
    ErrorBudgetEntry("Beamsplitter imperfection", 0.001, "upper-bound"),
    ErrorBudgetEntry("Residual erasure errors", 0.001, "upper-bound"),
    ErrorBudgetEntry("Micromotion", 0.0001, "upper-bound"),
    ErrorBudgetEntry("Coherence time", 0.0001, "upper-bound"),
)


@dataclass(frozen=True)
class SweepCurve:
    """Plot-ready curve: strictly increasing abscissa, optional band."""

    x_label: str
    y_label: str
    points: tuple[tuple[float, float], ...]
    band: Optional[tuple[tuple[float, float], ...]] = None  # (lo, hi) per point

    def __post_init__(self) -> None:
        xs = [x for x, _ in self.points]
        if any(b >= a for a, b in zip(xs[1:], xs)):
            raise DomainError("SweepCurve abscissa must be strictly increasing")
        if self.band is not None and len(self.band) != len(self.points):
            raise DomainError("band must have one (lo, hi) pair per point")

    @property
    def xs(self) -> tuple[float, ...]:
        return tuple(x for x, _ in self.points)

    @property
    def ys(self) -> tuple[float, ...]:
        return tuple(y for _, y in self.points)


def _golden_refine(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Golden-section maximization of f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def tune_tau(
    modes: Sequence[TrapMode],
    tau_range_s: tuple[float, float],
    resolution_s: float = 1e-9,
) -> tuple[float, float]:
    """Find the bin separation maximizing the time-bin contrast.

    Grid search at ``resolution_s`` over the range, ties broken toward
    smaller tau, then golden-section refinement around the best grid point.
    Returns (tau_opt, contrast at the optimum).
    """
    lo, hi = tau_range_s
    if not (lo > 0 and hi > lo):
        raise DomainError("tau_range must be positive with hi > lo")
    if resolution_s <= 0:
        raise DomainError("resolution must be positive")
    ordered = mode_order(modes)

    def objective(tau: float) -> float:
        return contrast_timebin(ordered, tau)[0]

    n = int(math.floor((hi - lo) / resolution_s)) + 1
    best_tau, best_c = lo, objective(lo)
    for i in range(1, n):
        t = lo + i * resolution_s
        c = objective(t)
        if c > best_c:  # strict: ties keep the smaller tau
            best_tau, best_c = t, c
    a = max(lo, best_tau - resolution_s)
    b = min(hi, best_tau + resolution_s)
    tau_opt = _golden_refine(objective, a, b, tol=resolution_s * 1e-6)
    c_opt = objective(tau_opt)
    if c_opt < best_c:
        tau_opt, c_opt = best_tau, best_c
    return tau_opt, c_opt


def _with_nbar(modes: Sequence[TrapMode], nbar_of: Callable[[TrapMode], float]) -> list[TrapMode]:
    return [replace(m, nbar=nbar_of(m)) for m in mode_order(modes)]


def sweep_tau(
    modes: Sequence[TrapMode],
    tau_range_s: tuple[float, float],
    n_points: int = 801,
    gamma_rad_s: float = 1.0 / 7.85e-9,
    theta_by_mode: Optional[dict[tuple[str, str], float]] = None,
) -> dict[str, SweepCurve]:
    """Time-bin contrast versus tau at three cooling levels.

    Curves: ``dopp_exp`` keeps the modes' own thermal occupations (the
    as-built cooling geometry), ``dopp_opt`` recomputes the Doppler limits
    for an optimal cooling geometry with equal beam projections on every
    axis (cos^2 theta = 1/3, geometric factor exactly 2 -- an
    interpretation, the optimal-geometry curve is not otherwise pinned
    down), and ``zero_point`` sets nbar = 0.  Each curve is rescaled to a
    maximum of 1.  ``theta_by_mode`` optionally overrides the cooling-beam
    angles used for ``dopp_exp`` recomputation; by default the modes'
    occupations are used as-is.
    """
    lo, hi = tau_range_s
    if not (lo > 0 and hi > lo and n_points >= 2):
        raise DomainError("bad tau range or point count")
    ordered = mode_order(modes)

    opt_theta = math.degrees(math.acos(math.sqrt(1.0 / 3.0)))
    variants = {
        "dopp_exp": ordered,
        "dopp_opt": _with_nbar(
            ordered, lambda m: doppler_nbar(m.freq_hz, opt_theta, gamma_rad_s)
        ),
        "zero_point": _with_nbar(ordered, lambda m: 0.0),
    }
    if theta_by_mode is not None:
        variants["dopp_exp"] = _with_nbar(
            ordered,
            lambda m: doppler_nbar(m.freq_hz, theta_by_mode[(m.ion, m.axis)], gamma_rad_s),
        )

    taus = [lo + (hi - lo) * i / (n_points - 1) for i in range(n_points)]
    out = {}
    for name, mset in variants.items():
        ys = [contrast_timebin(mset, t)[0] for t in taus]
        peak = max(ys)
        out[name] = SweepCurve(
            x_label="tau_s",
            y_label="timebin_contrast_rescaled",
            points=tuple((t, y / peak) for t, y in zip(taus, ys)),
        )
    return out


def _recoil_modes(
    node: NodeSpec, alpha_shift_deg: float = 0.0, tilt_shift_deg: float = 0.0
) -> list[TrapMode]:
    """Node modes with recoil parameters recomputed from shifted beam angles
    (thermal occupations stay at their nominal values)."""
    geom = replace(
        node.geometry,
        alpha_deg=node.geometry.alpha_deg + alpha_shift_deg,
        beam_tilt_deg=node.geometry.beam_tilt_deg + tilt_shift_deg,
    )
    angles = derive_beam_angles(geom)
    out = []
    for m in node.modes:
        eta, zeta = recoil_params(m.freq_hz, angles.pair(m.axis), node.emitter)
        out.append(replace(m, eta=eta, zeta=zeta))
    return out


def sweep_window(
    node_a: NodeSpec,
    node_b: NodeSpec,
    delta_t_list_s: Sequence[float],
    tau_r_s: float,
    angle_uncertainty_deg: float = 3.0,
) -> tuple[SweepCurve, SweepCurve]:
    """Relative fidelity and yield versus detection window width.

    The fidelity ordinate is the arrival-time coherence normalized to the
    zero-width window, F(dt)/F(0); its band is the envelope over beam-angle
    shifts of +-``angle_uncertainty_deg`` entering the recoil parameters.
    The yield overlay Y(dt) has no free parameters.
    """
    dts = sorted(set(float(d) for d in delta_t_list_s))
    if not dts or dts[0] < 0:
        raise DomainError("need nonnegative window widths")

    shifts = [0.0]
    if angle_uncertainty_deg > 0:
        shifts = [-angle_uncertainty_deg, 0.0, angle_uncertainty_deg]
    variants = []
    for da in shifts:
        for db in shifts:
            variants.append(
                _recoil_modes(node_a, da, db) + _recoil_modes(node_b, da, db)
            )
    nominal = _recoil_modes(node_a) + _recoil_modes(node_b)

    points, band, ypoints = [], [], []
    for dt in dts:
        ws = window_stats(dt, tau_r_s)
        f_nom = contrast_arrival(nominal, tau_r_s, ws.big_w)
        f_all = [contrast_arrival(v, tau_r_s, ws.big_w) for v in variants]
        points.append((dt, f_nom))
        band.append((min(f_all), max(f_all)))
        ypoints.append((dt, ws.yield_y))
    fidelity = SweepCurve(
        x_label="delta_t_s",
        y_label="relative_fidelity",
        points=tuple(points),
        band=tuple(band),
    )
    yield_curve = SweepCurve(x_label="delta_t_s", y_label="yield", points=tuple(ypoints))
    return fidelity, yield_curve


def compose_error_budget(
    entries: Iterable[ErrorBudgetEntry],
) -> tuple[list[tuple[str, float, str]], float]:
    """First-order additive error budget.

    Returns the presentation table (label, error, bound kind) and the total;
    the table's TOTAL row convention rounds to two decimals.  The total is
    permutation-invariant (entries are summed after a stable sort).
    """
    items = list(entries)
    table = [(e.label, e.fidelity_error, e.bound_kind) for e in items]
    total = math.fsum(sorted(e.fidelity_error for e in items))
    return table, total


def budget_table_text(entries: Iterable[ErrorBudgetEntry]) -> str:
    table, total = compose_error_budget(entries)
    width = max([len(t[0]) for t in table] + [len("TOTAL")]) if table else len("TOTAL")
    lines = [f"{'Source of error':<{width}}  Fidelity error"]
    for label, err, kind in table:
        mark = "<" if kind == "upper-bound" else " "
        lines.append(f"{label:<{width}}  {mark}{err:g}")
    lines.append(f"{'TOTAL':<{width}}   {round(total, 2):.2f}")
    return "\n".join(lines)


@dataclass(frozen=True)
class FidelityPrediction:
    point: float
    lo: float
    hi: float
    breakdown: dict = field(hash=False)


def predict_fidelity(
    node_a: NodeSpec,
    node_b: NodeSpec,
    tau_s: float,
    delta_t_s: float,
    tau_r_s: float,
    p_odd: float,
    static_contrast: float,
    extra_entries: Iterable[ErrorBudgetEntry] = (),
) -> FidelityPrediction:
    """Combine the recoil contrast model with budget-style penalties.

    ``point`` is the model fidelity (P_odd + C_static * C' * C'')/2;
    ``lo`` additionally charges the upper-bound budget entries at face
    value and ``hi`` is the optimistic budget-only estimate (measured
    entries plus the modeled recoil penalty).  What-if scenarios are
    expressed by editing the node modes (cooling), ``p_odd`` and
    ``static_contrast`` (SPAM/drive quality).
    """
    modes = list(node_a.modes) + list(node_b.modes)
    c_prime, _ = contrast_timebin(modes, tau_s)
    big_w = window_stats(delta_t_s, tau_r_s).big_w
    c_second = contrast_arrival(modes, tau_r_s, big_w)
    contrast = static_contrast * c_prime * c_second
    point = 0.5 * (p_odd + contrast)

    soft = [e for e in REFERENCE_BUDGET if e.bound_kind == "upper-bound"]
    soft += [e for e in extra_entries if e.bound_kind == "upper-bound"]
    measured = [e for e in REFERENCE_BUDGET if e.bound_kind == "measured"]
    recoil_penalty = 0.5 * (1.0 - c_prime * c_second)
    soft_total = math.fsum(e.fidelity_error for e in soft)
    # the measured SPAM/overlap entries replace their modeled counterparts in hi
    measured_nonrecoil = math.fsum(
        e.fidelity_error for e in measured if "recoil" not in e.label.lower()
    )
    lo = point - soft_total
    hi = 1.0 - measured_nonrecoil - recoil_penalty
    breakdown = {
        "timebin_contrast": c_prime,
        "arrival_contrast": c_second,
        "static_contrast": static_contrast,
        "total_contrast": contrast,
        "p_odd": p_odd,
        "recoil_fidelity_penalty": recoil_penalty,
        "upper_bound_entries_total": soft_total,
    }
    return FidelityPrediction(point=point, lo=lo, hi=max(hi, point), breakdown=breakdown)
