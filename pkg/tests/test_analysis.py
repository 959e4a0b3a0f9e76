import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebinlink.analysis import (
    FringeFit,
    ParityPoint,
    RamseyPoint,
    bell_fidelity_est,
    dump_parity_csv,
    fit_parity,
    fit_ramsey,
    load_parity_csv,
    load_ramsey_csv,
    odd_population,
    optimal_threshold,
)
from timebinlink.types import DomainError


def fringe_points(contrast, phi0, phases, n_shots, rng=None, offset=0.0):
    points = []
    for phi in phases:
        p_even = (1.0 + contrast * math.cos(phi - phi0) + offset) / 2.0
        if rng is None:
            n_even = int(round(p_even * n_shots))
        else:
            n_even = int(rng.binomial(n_shots, p_even))
        points.append(
            ParityPoint(phase_rad=phi, n_shots=n_shots, n_even=n_even, n_odd=n_shots - n_even)
        )
    return points


PHASES_12 = [2 * math.pi * k / 12 for k in range(12)]


class TestFitParity:
    def test_noiseless_recovery(self):
        # 1e9 shots/point makes count quantization ~1e-9 on the parity
        pts = fringe_points(0.949, 0.3, PHASES_12, 10**9)
        fit = fit_parity(pts)
        assert fit.contrast == pytest.approx(0.949, abs=1e-6)
        assert fit.phase_offset_rad == pytest.approx(0.3, abs=1e-6)
        assert fit.offset == pytest.approx(0.0, abs=1e-6)

    def test_constant_parity_is_degenerate_zero_contrast(self):
        pts = [ParityPoint(phi, 100, 50, 50) for phi in PHASES_12]
        fit = fit_parity(pts)
        assert fit.contrast == 0.0 and fit.degenerate

    def test_binomial_sampling_recovers_within_errors(self):
        rng = np.random.default_rng(42)
        pts = fringe_points(0.93, -0.8, PHASES_12, 500, rng=rng)
        fit = fit_parity(pts)
        assert abs(fit.contrast - 0.93) < 3 * fit.contrast_err
        assert abs(fit.phase_offset_rad + 0.8) < 3 * fit.phase_offset_err

    def test_error_bars_are_calibrated(self):
        # the quoted standard error should match the spread over trials
        rng = np.random.default_rng(3)
        fits = [fit_parity(fringe_points(0.93, 0.4, PHASES_12, 500, rng=rng)) for _ in range(120)]
        spread = np.std([f.contrast for f in fits])
        quoted = np.mean([f.contrast_err for f in fits])
        assert quoted == pytest.approx(spread, rel=0.35)

    def test_asymptotically_unbiased(self):
        rng = np.random.default_rng(9)
        c_true = 0.9
        fits = [
            fit_parity(fringe_points(c_true, 0.0, PHASES_12, 10_000, rng=rng)) for _ in range(100)
        ]
        bias = np.mean([f.contrast for f in fits]) - c_true
        sigma_mean = np.std([f.contrast for f in fits]) / math.sqrt(len(fits))
        assert abs(bias) < max(1.0 * np.mean([f.contrast_err for f in fits]), 3 * sigma_mean)

    @given(shift=st.floats(min_value=-3.0, max_value=3.0))
    @settings(max_examples=25, deadline=None)
    def test_global_phase_shift_invariance(self, shift):
        base = fringe_points(0.8, 0.2, PHASES_12, 10**6)
        shifted = [
            ParityPoint(p.phase_rad + shift, p.n_shots, p.n_even, p.n_odd) for p in base
        ]
        f0 = fit_parity(base)
        f1 = fit_parity(shifted)
        assert f1.contrast == pytest.approx(f0.contrast, abs=1e-9)
        # recovered offset absorbs the shift (mod 2 pi)
        d = (f1.phase_offset_rad - f0.phase_offset_rad - shift) % (2 * math.pi)
        assert min(d, 2 * math.pi - d) < 1e-6

    def test_insufficient_coverage_rejected(self):
        pts = fringe_points(0.9, 0.0, [0.0, 0.4, 0.8, 1.2], 100)
        with pytest.raises(DomainError, match="half a period"):
            fit_parity(pts)
        with pytest.raises(DomainError, match="4 distinct"):
            fit_parity(fringe_points(0.9, 0.0, [0.0, 2.0, 4.0], 100))

    def test_offset_free_mode(self):
        pts = fringe_points(0.7, 0.0, PHASES_12, 10**6)
        fit = fit_parity(pts, fit_offset=False)
        assert fit.offset == 0.0
        assert fit.contrast == pytest.approx(0.7, abs=1e-5)

    def test_csv_roundtrip(self):
        pts = fringe_points(0.5, 1.0, PHASES_12, 300, rng=np.random.default_rng(1))
        back = load_parity_csv(dump_parity_csv(pts))
        assert back == pts

    def test_contrast_stays_in_physical_range(self):
        # perfect-contrast data with few shots can push the raw amplitude
        # past 1; the reported magnitude is clamped, the raw value is not
        rng = np.random.default_rng(17)
        for _ in range(50):
            fit = fit_parity(fringe_points(1.0, 0.1, PHASES_12, 40, rng=rng))
            assert 0.0 <= fit.contrast <= 1.0
            assert fit.raw_amplitude == pytest.approx(1.0, abs=0.2)


class TestOddPopulation:
    def test_all_odd(self):
        p, err = odd_population(0, 40, 60, 0)
        assert p == 1.0

    def test_even_mix(self):
        p, _ = odd_population(25, 25, 25, 25)
        assert p == 0.5

    def test_reference_population_levels(self):
        # counts drawn to match the published 0.990(4) and 0.996(3) rows
        p, err = odd_population(3, 306, 307, 3)
        assert round(p, 3) == 0.990 and err == pytest.approx(0.004, abs=1e-3)
        p, err = odd_population(1, 224, 224, 1)
        assert round(p, 3) == 0.996 and err == pytest.approx(0.003, abs=5e-4)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            odd_population(0, 0, 0, 0)


class TestBellFidelityEst:
    def test_reference_row(self):
        fit = FringeFit(0.949, 0.006, 0.0, 0.0, 0.0, 0.0, 0.949)
        f, err = bell_fidelity_est(0.996, 0.003, fit)
        assert round(f, 3) == 0.972
        assert err == pytest.approx(0.5 * math.hypot(0.003, 0.006), rel=1e-12)
        assert err == pytest.approx(0.003, abs=5e-4)

    def test_perfect(self):
        fit = FringeFit(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
        assert bell_fidelity_est(1.0, 0.0, fit) == (1.0, 0.0)

    def test_error_propagation_halves_inputs(self):
        fit = FringeFit(0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9)
        _, err = bell_fidelity_est(0.9, 0.008, fit)
        assert err == pytest.approx(0.004, rel=1e-12)


class TestFitRamsey:
    def test_noiseless_exact_recovery(self):
        t2 = 2.10e-3
        delays = np.linspace(0.1e-3, 3.4e-3, 9)
        pts = [RamseyPoint(t, 0.5 * math.exp(-((t / t2) ** 2)), 0.01) for t in delays]
        fit = fit_ramsey(pts)
        assert fit.t2_star_s == pytest.approx(t2, abs=1e-9 * t2 + 1e-12)
        assert fit.amplitude == pytest.approx(0.5, rel=1e-9)

    def test_noisy_recovery_matches_quoted_uncertainty(self):
        # noise level tuned so the fit reports ~0.04 ms on T2*
        rng = np.random.default_rng(2024)
        t2 = 2.10e-3
        delays = np.linspace(0.1e-3, 3.4e-3, 9)
        sigma = 0.012
        pts = [
            RamseyPoint(
                t,
                0.5 * math.exp(-((t / t2) ** 2)) + rng.normal(0.0, sigma),
                sigma,
            )
            for t in delays
        ]
        fit = fit_ramsey(pts, max_amplitude=0.5)
        assert fit.t2_star_err_s == pytest.approx(0.04e-3, rel=0.5)
        assert abs(fit.t2_star_s - t2) <= 0.04e-3
        assert abs(fit.amplitude - 0.5) <= 3 * max(fit.amplitude_err, 1e-6)

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            fit_ramsey([RamseyPoint(0.0, 0.5, 0.01), RamseyPoint(1e-3, 0.3, 0.01)])

    def test_csv_loader(self):
        pts = load_ramsey_csv("delay_s,amplitude,err\n0.001,0.45,0.01\n0.002,0.3,0.01\n")
        assert pts[0] == RamseyPoint(0.001, 0.45, 0.01)


def poisson_pmf_sum(lam, k_from, k_to):
    """Independent Poisson oracle: direct log-space summation of pmf terms."""
    total = 0.0
    for k in range(k_from, k_to + 1):
        total += math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))
    return total


class TestOptimalThreshold:
    def test_reference_discrimination(self):
        res = optimal_threshold(0.1, 10.0)
        assert res.threshold == 2.5
        assert res.error_rate < 0.005
        assert res.bright_error == pytest.approx(poisson_pmf_sum(10.0, 0, 2), rel=1e-9)
        assert res.dark_error == pytest.approx(poisson_pmf_sum(0.1, 3, 200), rel=1e-9)
        assert res.bright_error == pytest.approx(2.8e-3, rel=0.02)
        assert res.dark_error == pytest.approx(1.5e-4, rel=0.05)

    def test_zero_dark_rate(self):
        res = optimal_threshold(0.0, 8.0)
        assert res.threshold == 0.5
        assert res.dark_error == 0.0

    def test_degenerate_rates(self):
        res = optimal_threshold(5.0, 5.0)
        assert res.degenerate and res.error_rate == 0.5

    def test_monotone_in_separation(self):
        errs = [optimal_threshold(0.5, b).error_rate for b in (2.0, 5.0, 10.0, 25.0)]
        assert all(a >= b for a, b in zip(errs, errs[1:]))
