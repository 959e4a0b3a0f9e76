import dataclasses
import math

import pytest

from timebinlink.physics import contrast_timebin
from timebinlink.planner import (
    REFERENCE_BUDGET,
    ErrorBudgetEntry,
    SweepCurve,
    budget_table_text,
    compose_error_budget,
    predict_fidelity,
    sweep_tau,
    sweep_window,
    tune_tau,
)
from timebinlink.types import DomainError, TrapMode

from conftest import TAU_S


def simple_mode(freq_hz, ion="A", axis="z", nbar=5.0, eta=0.08, zeta=0.03):
    return TrapMode(ion=ion, axis=axis, freq_hz=freq_hz, nbar=nbar, eta=eta, zeta=zeta)


class TestTuneTau:
    def test_reference_frequencies(self, ref_cfg):
        tau_opt, c_opt = tune_tau(ref_cfg.modes, (5000e-9, 7000e-9), resolution_s=1e-9)
        assert abs(tau_opt - TAU_S) <= 2e-9
        assert c_opt >= 0.999

    def test_single_mode_period(self):
        tau_opt, c_opt = tune_tau([simple_mode(1e6)], (900e-9, 1100e-9), resolution_s=1e-9)
        assert tau_opt == pytest.approx(1000e-9, abs=1e-12)
        assert c_opt == pytest.approx(1.0, abs=1e-12)

    def test_incommensurate_pair_is_stable_under_refinement(self):
        modes = [simple_mode(1e6, axis="z"), simple_mode(math.sqrt(2) * 1e6, axis="x")]
        t1, c1 = tune_tau(modes, (900e-9, 2100e-9), resolution_s=1e-9)
        t2, c2 = tune_tau(modes, (900e-9, 2100e-9), resolution_s=0.5e-9)
        assert c1 < 1.0
        assert t1 == pytest.approx(t2, abs=1e-12)
        assert c1 == pytest.approx(c2, rel=1e-9)

    def test_invariant_under_integer_frequency_scaling(self, ref_cfg):
        scaled = [dataclasses.replace(m, freq_hz=2 * m.freq_hz) for m in ref_cfg.modes]
        t1, _ = tune_tau(ref_cfg.modes, (6000e-9, 6100e-9), resolution_s=1e-9)
        t2, _ = tune_tau(scaled, (3000e-9, 3050e-9), resolution_s=0.5e-9)
        assert t2 == pytest.approx(t1 / 2.0, abs=0.2e-9)

    def test_bad_range(self):
        with pytest.raises(DomainError):
            tune_tau([simple_mode(1e6)], (1e-6, 1e-6))


class TestSweepTau:
    def test_three_curves_peak_at_reference_tau(self, ref_cfg):
        curves = sweep_tau(ref_cfg.modes, (6030e-9, 6066e-9), n_points=361)
        assert set(curves) == {"dopp_exp", "dopp_opt", "zero_point"}
        for curve in curves.values():
            xs, ys = curve.xs, curve.ys
            peak_x = xs[ys.index(max(ys))]
            assert abs(peak_x - 6048.4e-9) < 2e-9
            assert max(ys) == 1.0  # rescaled to a maximum of 1

    def test_colder_is_higher_before_rescaling(self, ref_cfg):
        zero = [dataclasses.replace(m, nbar=0.0) for m in ref_cfg.modes]
        for tau in (6030e-9, 6048e-9, 6070e-9):
            c_zero, _ = contrast_timebin(zero, tau)
            c_dopp, _ = contrast_timebin(ref_cfg.modes, tau)
            assert c_zero >= c_dopp

    def test_detuned_tau_drops_measurably(self, ref_cfg):
        curves = sweep_tau(ref_cfg.modes, (6018e-9, 6078e-9), n_points=601)
        exp = dict(zip(curves["dopp_exp"].xs, curves["dopp_exp"].ys))
        x_lo = min(exp, key=lambda x: abs(x - 6018e-9))
        x_hi = min(exp, key=lambda x: abs(x - 6078e-9))
        assert exp[x_lo] < 0.95 and exp[x_hi] < 0.95


class TestSweepWindow:
    def test_yield_overlay_matches_window_statistics(self, ref_cfg):
        _, yld = sweep_window(
            ref_cfg.node_a, ref_cfg.node_b, [2e-9, 10e-9, 50e-9], 7.85e-9
        )
        ys = dict(zip(yld.xs, yld.ys))
        assert ys[2e-9] == pytest.approx(0.225, abs=0.002)
        assert ys[10e-9] == pytest.approx(0.720, abs=0.005)
        assert ys[50e-9] == pytest.approx(0.998, abs=0.001)

    def test_relative_fidelity_gain(self, ref_cfg):
        fid, _ = sweep_window(ref_cfg.node_a, ref_cfg.node_b, [10e-9, 50e-9], 7.85e-9)
        f = dict(zip(fid.xs, fid.ys))
        gain = (f[10e-9] - f[50e-9]) / 2.0
        assert 0.005 <= gain <= 0.02

    def test_band_vanishes_without_angle_uncertainty(self, ref_cfg):
        fid, _ = sweep_window(
            ref_cfg.node_a, ref_cfg.node_b, [10e-9], 7.85e-9, angle_uncertainty_deg=0.0
        )
        (lo, hi), = fid.band
        (x, y), = fid.points
        assert lo == y == hi

    def test_band_brackets_nominal(self, ref_cfg):
        fid, _ = sweep_window(ref_cfg.node_a, ref_cfg.node_b, [10e-9, 50e-9], 7.85e-9)
        for (x, y), (lo, hi) in zip(fid.points, fid.band):
            assert lo <= y <= hi
            assert hi - lo > 0


class TestErrorBudget:
    def test_reference_budget_total(self):
        _, total = compose_error_budget(REFERENCE_BUDGET)
        assert total == pytest.approx(0.0212, abs=1e-12)
        assert round(total, 2) == 0.02

    def test_empty(self):
        table, total = compose_error_budget([])
        assert table == [] and total == 0.0

    def test_additivity(self):
        _, base = compose_error_budget(REFERENCE_BUDGET)
        extra = list(REFERENCE_BUDGET) + [ErrorBudgetEntry("new drift term", 0.005)]
        _, total = compose_error_budget(extra)
        assert total == pytest.approx(base + 0.005, abs=1e-15)

    def test_permutation_invariance(self):
        import itertools

        entries = [ErrorBudgetEntry(f"e{i}", x) for i, x in enumerate((0.1, 0.0003, 0.07, 1e-7))]
        totals = {compose_error_budget(p)[1] for p in itertools.permutations(entries)}
        assert len(totals) == 1

    def test_table_text_total_row(self):
        text = budget_table_text(REFERENCE_BUDGET)
        assert text.splitlines()[-1].endswith("0.02")
        assert "Photon wavepacket overlap" in text


class TestPredictFidelity:
    def test_reference_prediction_brackets_observation(self, ref_cfg):
        pred = predict_fidelity(
            ref_cfg.node_a,
            ref_cfg.node_b,
            tau_s=ref_cfg.protocol.tau_s,
            delta_t_s=10e-9,
            tau_r_s=7.85e-9,
            p_odd=ref_cfg.p_odd(),
            static_contrast=ref_cfg.static_contrast(),
        )
        assert pred.point == pytest.approx(0.9725, abs=2e-3)
        assert pred.lo <= 0.972 <= pred.hi
        assert 0.96 < pred.lo < pred.hi < 0.99

    def test_no_penalties_is_unit_fidelity(self, ref_cfg):
        modes = [dataclasses.replace(m, eta=0.0, zeta=0.0) for m in ref_cfg.node_a.modes]
        node_a = dataclasses.replace(ref_cfg.node_a, modes=tuple(modes))
        modes_b = [dataclasses.replace(m, eta=0.0, zeta=0.0) for m in ref_cfg.node_b.modes]
        node_b = dataclasses.replace(ref_cfg.node_b, modes=tuple(modes_b))
        pred = predict_fidelity(
            node_a, node_b, TAU_S, 0.0, 7.85e-9, p_odd=1.0, static_contrast=1.0
        )
        assert pred.point == 1.0

    def test_improved_apparatus_scenario(self, ref_cfg):
        # sub-Doppler cooling, better SPAM, ideal overlap and drive stability
        cold_a = dataclasses.replace(
            ref_cfg.node_a,
            modes=tuple(dataclasses.replace(m, nbar=0.5) for m in ref_cfg.node_a.modes),
        )
        cold_b = dataclasses.replace(
            ref_cfg.node_b,
            modes=tuple(dataclasses.replace(m, nbar=0.5) for m in ref_cfg.node_b.modes),
        )
        e = 1e-3
        p_odd = (1 - e) ** 2 + e**2
        static = (1 - 2 * e) ** 2
        pred = predict_fidelity(
            cold_a, cold_b, TAU_S, 10e-9, 7.85e-9, p_odd=p_odd, static_contrast=static
        )
        assert pred.point > 0.995


class TestSweepCurve:
    def test_rejects_nonincreasing_abscissa(self):
        with pytest.raises(DomainError):
            SweepCurve("x", "y", points=((1.0, 0.0), (1.0, 1.0)))

    def test_band_length_checked(self):
        with pytest.raises(DomainError):
            SweepCurve("x", "y", points=((0.0, 0.0), (1.0, 1.0)), band=((0.0, 0.0),))
