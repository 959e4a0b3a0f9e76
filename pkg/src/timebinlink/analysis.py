"""Statistical estimators: parity-fringe fits, populations, Ramsey decay,
Poisson readout thresholds.

All estimators are pure; uncertainties are 1-sigma standard errors.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit, least_squares
from scipy.stats import poisson

from .types import DomainError


@dataclass(frozen=True)
class ParityPoint:
    """Two-qubit parity measurement at one analysis phase."""

    phase_rad: float
    n_shots: int
    n_even: int
    n_odd: int

    def __post_init__(self) -> None:
        if self.n_shots <= 0 or self.n_even < 0 or self.n_odd < 0:
            raise DomainError("shot counts must be nonnegative, n_shots positive")
        if self.n_even + self.n_odd != self.n_shots:
            raise DomainError("n_even + n_odd must equal n_shots")

    @property
    def parity(self) -> float:
        return (self.n_even - self.n_odd) / self.n_shots

    @property
    def parity_err(self) -> float:
        # binomial error of p_even propagated to parity = 2 p_even - 1
        p = self.n_even / self.n_shots
        return 2.0 * math.sqrt(max(p * (1.0 - p), 0.25 / self.n_shots) / self.n_shots)


@dataclass(frozen=True)
class FringeFit:
    """Result of a parity-fringe fit parity(phi) = C cos(phi - phi0) + b."""

    contrast: float
    contrast_err: float
    phase_offset_rad: float
    phase_offset_err: float
    offset: float
    offset_err: float
    raw_amplitude: float  # signed amplitude before the C >= 0 clamp
    degenerate: bool = False


@dataclass(frozen=True)
class RamseyPoint:
    """Fitted fringe amplitude at one Ramsey delay."""

    delay_s: float
    amplitude: float
    amplitude_err: float


@dataclass(frozen=True)
class RamseyFit:
    t2_star_s: float
    t2_star_err_s: float
    amplitude: float
    amplitude_err: float


def _wrap_phase(phi: float) -> float:
    out = math.fmod(phi + math.pi, 2.0 * math.pi)
    if out <= 0.0:
        out += 2.0 * math.pi
    return out - math.pi


def fit_parity(points: Sequence[ParityPoint], fit_offset: bool = True) -> FringeFit:
    """Weighted least-squares fit of the parity fringe at unit scan frequency.

    A Fourier projection onto cos/sin initializes the nonlinear fit (the
    phase-scan frequency is known by construction), then weighted nonlinear
    least squares refines (C, phi0, b) with binomial weights.  The returned
    contrast is clamped at zero (it is a magnitude); the signed amplitude is
    kept in ``raw_amplitude``.  phi0 is wrapped to (-pi, pi].
    """
    pts = list(points)
    phases = np.array([p.phase_rad for p in pts])
    if len(pts) < 4 or np.unique(np.round(phases, 12)).size < 4:
        raise DomainError("need at least 4 distinct analysis phases")
    if np.ptp(phases) < math.pi:
        raise DomainError("phase scan must span at least half a period")
    y = np.array([p.parity for p in pts])
    sigma = np.array([p.parity_err for p in pts])

    if np.allclose(y, y[0]):
        return FringeFit(
            contrast=0.0,
            contrast_err=float(np.mean(sigma)),
            phase_offset_rad=0.0,
            phase_offset_err=float("nan"),
            offset=float(y[0]),
            offset_err=float(np.mean(sigma) / math.sqrt(len(pts))),
            raw_amplitude=0.0,
            degenerate=True,
        )

    # Fourier projection at the known unit frequency
    a_cos = 2.0 * np.mean(y * np.cos(phases))
    a_sin = 2.0 * np.mean(y * np.sin(phases))
    c0 = math.hypot(a_cos, a_sin)
    phi0 = math.atan2(a_sin, a_cos)
    b0 = float(np.mean(y)) if fit_offset else 0.0

    if fit_offset:

        def resid(p):
            return (p[0] * np.cos(phases - p[1]) + p[2] - y) / sigma

        x0 = [c0, phi0, b0]
    else:

        def resid(p):
            return (p[0] * np.cos(phases - p[1]) - y) / sigma

        x0 = [c0, phi0]

    sol = least_squares(resid, x0, method="lm", max_nfev=10000)
    jtj = sol.jac.T @ sol.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((len(x0), len(x0)), np.nan)
    errs = np.sqrt(np.abs(np.diag(cov)))

    raw_c, fit_phi = float(sol.x[0]), float(sol.x[1])
    offset = float(sol.x[2]) if fit_offset else 0.0
    offset_err = float(errs[2]) if fit_offset else 0.0
    if raw_c < 0:  # fold the sign into the phase so contrast is a magnitude
        fit_phi += math.pi
    # contrast is a physical magnitude: clamp to [0, 1], keep the raw
    # signed/unclamped amplitude for diagnostics
    return FringeFit(
        contrast=min(abs(raw_c), 1.0),
        contrast_err=float(errs[0]),
        phase_offset_rad=_wrap_phase(fit_phi),
        phase_offset_err=float(errs[1]),
        offset=offset,
        offset_err=offset_err,
        raw_amplitude=raw_c,
    )


def odd_population(
    n_down_down: int, n_down_up: int, n_up_down: int, n_up_up: int
) -> tuple[float, float]:
    """Odd-parity population (N_du + N_ud)/N with its binomial error."""
    total = n_down_down + n_down_up + n_up_down + n_up_up
    if total <= 0:
        raise DomainError("need at least one shot")
    p = (n_down_up + n_up_down) / total
    return p, math.sqrt(max(p * (1.0 - p), 0.25 / total) / total)


def bell_fidelity_est(
    p_odd: float, p_odd_err: float, fringe: FringeFit
) -> tuple[float, float]:
    """F = (P_odd + C)/2 with independent errors combined in quadrature."""
    f = 0.5 * (p_odd + fringe.contrast)
    return f, 0.5 * math.hypot(p_odd_err, fringe.contrast_err)


def fit_ramsey(
    points: Sequence[RamseyPoint], max_amplitude: Optional[float] = None
) -> RamseyFit:
    """Fit amplitude(t) = A exp[-(t/T2*)^2] to Ramsey fringe amplitudes.

    ``max_amplitude`` optionally bounds A (0.5 for unentangled preparation).
    """
    pts = list(points)
    if len(pts) < 3:
        raise DomainError("need at least 3 delay points")
    t = np.array([p.delay_s for p in pts])
    y = np.array([p.amplitude for p in pts])
    err = np.array([p.amplitude_err if p.amplitude_err > 0 else 1.0 for p in pts])

    def model(tt, a, t2):
        return a * np.exp(-((tt / t2) ** 2))

    a0 = float(np.max(y))
    positive = y > max(1e-3 * a0, 1e-12)
    t2_guess = float(np.median(t[positive])) if positive.any() else float(np.mean(t))
    bounds = ((0.0, 1e-12), (max_amplitude if max_amplitude else np.inf, np.inf))
    popt, pcov = curve_fit(
        model,
        t,
        y,
        p0=[min(a0, bounds[1][0]), t2_guess],
        sigma=err,
        absolute_sigma=True,
        bounds=bounds,
        maxfev=20000,
    )
    perr = np.sqrt(np.diag(pcov))
    return RamseyFit(
        t2_star_s=float(popt[1]),
        t2_star_err_s=float(perr[1]),
        amplitude=float(popt[0]),
        amplitude_err=float(perr[0]),
    )


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float  # half-integer count threshold
    error_rate: float  # mean misclassification probability, equal priors
    dark_error: float  # P(dark counts > threshold)
    bright_error: float  # P(bright counts < threshold)
    degenerate: bool = False


def optimal_threshold(lambda_dark: float, lambda_bright: float) -> ThresholdResult:
    """Half-integer photon-count threshold minimizing the average Poisson
    misclassification between a dark and a bright state (equal priors)."""
    if lambda_dark < 0 or lambda_bright <= 0:
        raise DomainError("rates must be nonnegative, lambda_bright positive")
    if lambda_bright <= lambda_dark:
        return ThresholdResult(
            threshold=0.5, error_rate=0.5, dark_error=0.5, bright_error=0.5, degenerate=True
        )
    # the optimal cut lies where the two PMFs cross, well under ~10 sigma out
    k_max = int(lambda_bright + 10.0 * math.sqrt(lambda_bright) + 10)
    ks = np.arange(0, k_max + 1)
    bright_cdf = poisson.cdf(ks, lambda_bright)  # P(bright <= k)
    dark_tail = poisson.sf(ks, lambda_dark)  # P(dark > k)
    avg = 0.5 * (bright_cdf + dark_tail)
    i = int(np.argmin(avg))
    return ThresholdResult(
        threshold=ks[i] + 0.5,
        error_rate=float(avg[i]),
        dark_error=float(dark_tail[i]),
        bright_error=float(bright_cdf[i]),
    )


# ---------------------------------------------------------------------------
# CSV dataset interfaces

PARITY_CSV_HEADER = "phase_rad,n_shots,n_odd"
RAMSEY_CSV_HEADER = "delay_s,amplitude,err"


def load_parity_csv(text: str) -> list[ParityPoint]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != PARITY_CSV_HEADER:
        raise DomainError(f"expected header {PARITY_CSV_HEADER!r}")
    points = []
    for ln in lines[1:]:
        phase, n_shots, n_odd = ln.split(",")
        n_shots, n_odd = int(n_shots), int(n_odd)
        points.append(
            ParityPoint(
                phase_rad=float(phase), n_shots=n_shots, n_even=n_shots - n_odd, n_odd=n_odd
            )
        )
    return points


def dump_parity_csv(points: Iterable[ParityPoint]) -> str:
    out = io.StringIO()
    out.write(PARITY_CSV_HEADER + "\n")
    for p in points:
        out.write(f"{p.phase_rad!r},{p.n_shots},{p.n_odd}\n")
    return out.getvalue()


def load_ramsey_csv(text: str) -> list[RamseyPoint]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != RAMSEY_CSV_HEADER:
        raise DomainError(f"expected header {RAMSEY_CSV_HEADER!r}")
    return [
        RamseyPoint(delay_s=float(a), amplitude=float(b), amplitude_err=float(c))
        for a, b, c in (ln.split(",") for ln in lines[1:])
    ]


def fringe_fit_report(fit: FringeFit) -> dict:
    """JSON-ready fit report using the 1-sigma parenthetical convention."""
    return {
        "contrast": fit.contrast,
        "contrast_err": fit.contrast_err,
        "phase_offset_rad": fit.phase_offset_rad,
        "phase_offset_err": fit.phase_offset_err,
        "offset": fit.offset,
        "offset_err": fit.offset_err,
        "raw_amplitude": fit.raw_amplitude,
        "degenerate": fit.degenerate,
    }
