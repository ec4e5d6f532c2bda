import itertools
import math

import numpy as np
import pandas as pd
import pytest

from polar.channel import BmsChannel, Family, channel_from_capacity
from polar.codec import Variant
from polar.construction import PolarCode, ReliabilityTable, bec_reliability, de_bytes
from polar.errors import CandidateError, ResourceBudgetError, WindowError
from polar.latency import (LatencyReport, build_pruned_tree, check_scaling_candidate,
                           count_latencies, count_latency_mask, count_latency_streaming,
                           default_window, feasible_n, fit_slope, format_schedule, info_pyramid,
                           latency, latency_sweep, latency_sweeps, load_report, parse_n_range,
                           polarized_rate_check, pruning_rounds, save_report, schedule,
                           unpolarized_fraction)

# log2 of the node counts, BEC with I(W) = 0.5
SSC_PE_1E3 = [0, 0, 0, 0, 3.169925, 3.169925, 4.954196, 6.022368, 6.820179, 7.761551,
              8.675957, 9.556506, 10.416798, 11.242579, 12.046783]
SSC_PE_1E10 = [0, 0, 0, 0, 0, 0, 3.700439718, 5.044394, 6.409391, 7.434628, 8.447083226,
               9.509775, 10.470659, 11.392854, 12.260626]
FASTSSC_PE_1E3 = [0, 0, 0, 0, 0, 3.169925, 3.169925, 4.392317, 5.209453, 6.108524, 6.894818,
                  8.016808, 8.675957, 9.525521, 10.352043]
SSC_PE_1E3_TAIL = [16.76101874564537653, 17.52772897918726969, 18.28869938626520764,
                   19.04654053306329331, 19.80145734299838978, 20.55595680427493477,
                   21.30626699765168297, 22.05552903495953387]
FASTSSC_PE_1E3_TAIL = [14.97356284719469599, 15.73843536569174439, 16.48181519529292771,
                       17.23945868307927398, 17.98214131144002437, 18.73003891306493822,
                       19.47577498446823796, 20.21757555754692959]

FULL_TREE_N3 = ['channel', 'f_l 2', 'f_l 1', 'f_l 0', 'f_r 0', 'f_r 1', 'f_l 0', 'f_r 0',
                'f_r 2', 'f_l 1', 'f_l 0', 'f_r 0', 'f_r 1', 'f_l 0', 'f_r 0']
MIXED_SSC = ['channel', 'f_l 2', 'f_l 1', 'f_r 1', 'f_l 0', 'f_r 0', 'f_r 2', 'f_l 1',
               'f_l 0', 'f_r 0', 'f_r 1']

BEC_HALF = BmsChannel('bec', 0.5)
ALL_VARIANTS = tuple(Variant)


def report_from_log2(series_by_variant, n_values):
    rows = pd.DataFrame({'n': list(n_values), 'rate': 0.0})
    for column in ('latency_sc', 'latency_ssc', 'latency_fastssc'):
        rows[column] = pd.array([pd.NA] * len(rows), dtype='Int64')
    for variant, values in series_by_variant.items():
        rows[f'latency_{variant.value}'] = pd.array([round(2.0 ** v) for v in values], dtype='Int64')
    return LatencyReport(Family.BEC, 0.5, 1e-3, rows)


class TestTrees:
    def test_mixed_tree(self, mixed_code):
        tree = build_pruned_tree(mixed_code, Variant.SSC)
        assert latency(tree) == 11
        assert schedule(tree) == MIXED_SSC
        assert tree.nodes['kind'].tolist().count('rate0') == 3
        assert tree.nodes['kind'].tolist().count('rate1') == 3

    def test_mixed_fast_tree(self, mixed_code):
        tree = build_pruned_tree(mixed_code, Variant.FASTSSC)
        assert tree.nodes['kind'].tolist() == ['branch', 'rep', 'spc']
        assert schedule(tree) == ['channel', 'f_l 2', 'f_r 2']

    def test_full_tree(self):
        code = PolarCode.from_frozen_positions(3, [1, 2])
        tree = build_pruned_tree(code, Variant.SC)
        assert schedule(tree) == FULL_TREE_N3
        assert latency(tree) == 15

    def test_single_channel(self):
        code = PolarCode.from_frozen_positions(0, [])
        for variant in Variant:
            tree = build_pruned_tree(code, variant)
            assert schedule(tree) == ['channel']
            assert latency(tree) == 1

    def test_sc_five(self, random_code):
        assert latency(build_pruned_tree(random_code(5), 'sc')) == 63

    def test_single_info_bit_code(self, bec_code):
        code = bec_code(4)
        assert code.info_positions.tolist() == [15]
        assert latency(build_pruned_tree(code, Variant.SSC)) == 9
        assert latency(build_pruned_tree(code, Variant.FASTSSC)) == 1

    def test_two_info_bits_at_n5(self, bec_code):
        code = bec_code(5)
        assert code.info_positions.tolist() == [30, 31]
        assert latency(build_pruned_tree(code, Variant.SSC)) == 9
        assert latency(build_pruned_tree(code, Variant.FASTSSC)) == 9

    def test_format(self):
        assert format_schedule(['channel', 'f_l 0', 'f_r 0'], compact=True) == 'channel -> f_l 0 -> f_r 0'
        assert format_schedule(['channel'], compact=False) == 'channel'


class TestStreamingCounter:
    def test_pyramid(self):
        pyramid = info_pyramid(np.array([0, 0, 0, 1, 0, 1, 1, 1], dtype=bool))
        assert [p.tolist() for p in pyramid[1:]] == [[0, 1, 1, 2], [1, 3], [4]]

    def test_pyramid_needs_power_of_two(self):
        with pytest.raises(ValueError):
            info_pyramid(np.ones(6, dtype=bool))

    @pytest.mark.parametrize("n", [0, 1, 2, 3])
    def test_every_mask_matches_the_tree(self, n):
        for bits in itertools.product([False, True], repeat=1 << n):
            code = PolarCode(n=n, frozen=~np.array(bits))
            counts = count_latencies(~code.frozen, ALL_VARIANTS)
            for variant in Variant:
                assert counts[variant] == latency(build_pruned_tree(code, variant)), (bits, variant)

    def test_random_masks_match_the_tree(self, random_code):
        for n in range(4, 13):
            code = random_code(n)
            counts = count_latencies(~code.frozen, ALL_VARIANTS)
            for variant in Variant:
                assert counts[variant] == latency(build_pruned_tree(code, variant))

    def test_polarized_masks_match_the_tree(self, bec_code):
        for n in (8, 11, 14):
            code = bec_code(n)
            for variant in (Variant.SSC, Variant.FASTSSC):
                assert count_latency_mask(~code.frozen, variant) == \
                    latency(build_pruned_tree(code, variant))

    def test_pruning_is_monotone_and_odd(self, random_code):
        for n in range(1, 12):
            counts = count_latencies(~random_code(n).frozen, ALL_VARIANTS)
            assert counts[Variant.FASTSSC] <= counts[Variant.SSC] <= counts[Variant.SC]
            assert counts[Variant.SC] == 2 ** (n + 1) - 1
            assert all(c % 2 == 1 for c in counts.values())

    @pytest.mark.parametrize("n", [0, 5, 16])
    def test_all_frozen_is_one_node(self, n):
        for variant in (Variant.SSC, Variant.FASTSSC):
            assert count_latency_mask(np.zeros(1 << n, dtype=bool), variant) == 1

    def test_from_table(self):
        table = bec_reliability(0.5, 10)
        assert count_latency_streaming(table, 1e-3, Variant.SSC) == 409
        assert count_latency_streaming(table, 1e-3, Variant.FASTSSC) == 119
        assert count_latency_streaming(table, 1e-3, Variant.SC) == 2047


class TestSweeps:
    def test_bec_series(self):
        report = latency_sweep(BEC_HALF, 1e-3, range(15), ALL_VARIANTS)
        np.testing.assert_allclose(report.log2_series(Variant.SSC).to_numpy(), SSC_PE_1E3,
                                   rtol=0, atol=1e-6)
        np.testing.assert_allclose(report.log2_series(Variant.FASTSSC).to_numpy(), FASTSSC_PE_1E3,
                                   rtol=0, atol=1e-6)
        sc = report.rows['latency_sc'].astype(int).to_numpy()
        np.testing.assert_array_equal(sc, 2 ** (np.arange(15) + 1) - 1)

    def test_one_pass_serves_several_targets(self):
        low, high = latency_sweeps(BEC_HALF, [1e-3, 1e-10], range(15), [Variant.SSC], threads=2)
        np.testing.assert_allclose(low.log2_series('ssc').to_numpy(), SSC_PE_1E3, atol=1e-6)
        np.testing.assert_allclose(high.log2_series('ssc').to_numpy(), SSC_PE_1E10, atol=1e-6)
        assert high.rows['latency_sc'].isna().all()

    @pytest.mark.parametrize("capacity,n,expected", [
        (0.1, 7, 3.906891), (0.9, 2, 2.321928), (0.9, 3, 2.807355), (0.9, 4, 4.247928)])
    def test_other_capacities(self, capacity, n, expected):
        report = latency_sweep(BmsChannel('bec', 1.0 - capacity), 1e-3, [n], [Variant.SSC])
        assert report.log2_series('ssc').iloc[0] == pytest.approx(expected, abs=1e-6)

    def test_rates_and_capacity_gap(self):
        report = latency_sweep(BEC_HALF, 1e-3, range(3, 11))
        assert report.rows.loc[report.rows['n'] == 3, 'rate'].item() == 0.0
        assert report.rows.loc[report.rows['n'] == 4, 'rate'].item() == 1 / 16
        gap = report.capacity_gap()
        assert gap.loc[3] == 0.5
        assert (gap > 0).all()
        assert report.methods == {n: 'bec' for n in range(3, 11)}

    def test_bsc_fast_never_exceeds_ssc(self, bsc_half):
        report = latency_sweep(bsc_half, 1e-3, range(9), [Variant.SSC, Variant.FASTSSC],
                               resolution=16)
        assert (report.rows['latency_fastssc'] <= report.rows['latency_ssc']).all()
        assert set(report.methods.values()) == {'de'}

    def test_truncated_sweep(self, bsc_half):
        report = latency_sweep(bsc_half, 1e-3, range(12), [Variant.SSC], resolution=16, de_max_n=8)
        assert report.truncated and report.truncated_after == 8
        assert report.rows['n'].tolist() == list(range(9))

    def test_nothing_fits(self, bsc_half):
        with pytest.raises(ResourceBudgetError):
            latency_sweep(bsc_half, 1e-3, [4], resolution=64, budget_bytes=1024)

    def test_gaussian_channel_crosses_the_threshold_within_budget(self):
        channel = channel_from_capacity('bawgnc', 0.5)
        report = latency_sweep(channel, 1e-3, range(10), [Variant.SSC], resolution=4,
                               ga_threshold_n=6, budget_bytes=de_bytes(4, 4))
        assert not report.truncated
        assert report.rows['n'].tolist() == list(range(10))
        assert report.methods == {n: 'de' if n <= 4 else 'ga' for n in range(10)}
        assert report.rows['latency_ssc'].notna().all()

    def test_gaussian_channel_switches_at_the_threshold(self):
        channel = channel_from_capacity('bawgnc', 0.5)
        report = latency_sweep(channel, 1e-3, range(9), [Variant.SSC], resolution=4,
                               ga_threshold_n=6)
        assert report.methods == {n: 'de' if n <= 6 else 'ga' for n in range(9)}

    def test_feasible_n(self, bsc_half):
        assert feasible_n(BEC_HALF, 20, budget_bytes=8 << 10) == 10
        assert feasible_n(bsc_half, 30, de_max_n=12) == 12

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            latency_sweep(BEC_HALF, 1.5, range(4))

    def test_csv_round_trip(self, tmp_path):
        report = latency_sweep(BEC_HALF, 1e-3, range(12), ALL_VARIANTS)
        fit_slope(report, Variant.SC, (4, 11))
        csv_path, json_path = save_report(report, tmp_path / 'bec.csv')
        assert json_path.exists()
        loaded = load_report(csv_path)
        pd.testing.assert_frame_equal(loaded.to_frame(), report.to_frame())
        assert loaded.fitted_slopes == report.fitted_slopes
        assert loaded.methods == report.methods
        assert loaded.channel_capacity == report.channel_capacity

    def test_csv_missing_columns(self, tmp_path):
        path = tmp_path / 'bad.csv'
        path.write_text('n,rate\n0,0.0\n')
        with pytest.raises(ValueError):
            load_report(path)


class TestParseRange:
    @pytest.mark.parametrize("text,expected", [
        ('0..3', [0, 1, 2, 3]), ('5', [5]), ('8,3,5', [3, 5, 8]), (' 2..2 ', [2])])
    def test_forms(self, text, expected):
        assert parse_n_range(text) == expected

    def test_reversed(self):
        with pytest.raises(ValueError):
            parse_n_range('5..3')


class TestSlopes:
    def test_sc_slope_is_one(self):
        report = latency_sweep(BEC_HALF, 1e-3, range(15), [Variant.SC])
        slope, _ = fit_slope(report, Variant.SC, (10, 14))
        assert slope == pytest.approx(1.0, abs=1e-3)
        assert report.fitted_slopes['sc']['window'] == [10, 14]

    def test_recorded_bec_slopes(self):
        report = report_from_log2({Variant.SSC: SSC_PE_1E3_TAIL,
                                   Variant.FASTSSC: FASTSSC_PE_1E3_TAIL}, range(20, 28))
        ssc, _ = fit_slope(report, Variant.SSC, (20, 27))
        fast, _ = fit_slope(report, Variant.FASTSSC, (20, 27))
        assert ssc == pytest.approx(0.72, abs=0.04)
        assert abs(fast - ssc) <= 0.03

    def test_window_too_small(self):
        report = latency_sweep(BEC_HALF, 1e-3, range(15), [Variant.SC])
        with pytest.raises(WindowError):
            fit_slope(report, Variant.SC, (12, 14))

    def test_default_windows(self):
        assert default_window(Family.BEC, 27) == (20, 27)
        assert default_window(Family.BSC, 20) == (16, 20)

    @pytest.mark.slow
    def test_bec_series_to_n27(self):
        report = latency_sweep(BEC_HALF, 1e-3, range(28), [Variant.SSC, Variant.FASTSSC])
        np.testing.assert_allclose(report.log2_series('ssc').loc[20:].to_numpy(), SSC_PE_1E3_TAIL,
                                   rtol=0, atol=1e-9)
        np.testing.assert_allclose(report.log2_series('fastssc').loc[20:].to_numpy(),
                                   FASTSSC_PE_1E3_TAIL, rtol=0, atol=1e-9)
        ssc, _ = fit_slope(report, 'ssc', (20, 27))
        assert ssc == pytest.approx(0.72, abs=0.04)

    @pytest.mark.slow
    @pytest.mark.parametrize("family,expected", [('bsc', 0.76), ('bawgnc', 0.75)])
    def test_ssc_slope_on_other_channels(self, family, expected):
        channel = channel_from_capacity(family, 0.5)
        report = latency_sweep(channel, 1e-3, range(21), [Variant.SSC], resolution=16)
        assert not report.truncated
        slope, _ = fit_slope(report, Variant.SSC, default_window(channel.family, 20))
        assert slope == pytest.approx(expected, abs=0.05)


class TestScalingCandidates:
    x = np.linspace(0.0, 1.0, 10001)

    def test_identity_is_invalid(self):
        for family in ('bec', 'general'):
            result = check_scaling_candidate(self.x, self.x, family)
            assert not result.valid
            assert result.sup_ratio == pytest.approx(1.0, abs=1e-9)
            assert str(result).endswith('invalid')

    def test_parabola_on_the_bec(self):
        result = check_scaling_candidate(self.x, self.x * (1 - self.x), 'bec')
        assert result.sup_ratio == pytest.approx(0.9999, abs=2e-6)
        assert result.valid and result.mu > 1.0

    def test_evaluation_grid(self):
        h = self.x * (1 - self.x)
        # on the BEC the parabola ratio is 1 - x + x^2, largest at the first interior point
        assert check_scaling_candidate(self.x, h).sup_ratio == pytest.approx(0.99990001, abs=5e-8)
        coarse = check_scaling_candidate(self.x, h, x_points=101)
        assert coarse.sup_ratio == pytest.approx(0.9901, abs=1e-6)
        with pytest.raises(ValueError):
            check_scaling_candidate(self.x, h, x_points=2)

    def test_general_dominates_bec(self):
        h = np.sqrt(self.x * (1 - self.x))
        bec = check_scaling_candidate(self.x, h, 'bec', y_points=200)
        general = check_scaling_candidate(self.x, h, 'general', y_points=200)
        assert general.sup_ratio >= bec.sup_ratio - 1e-12
        assert bec.valid
        assert bec.mu == pytest.approx(-1.0 / math.log2(bec.sup_ratio))

    @pytest.mark.parametrize("x,h", [
        ([0.0, 0.5, 1.0], [0.1, 0.2, 0.0]),
        ([0.0, 0.5, 1.0], [0.0, -0.2, 0.0]),
        ([0.0, 0.6, 0.5, 1.0], [0.0, 0.1, 0.1, 0.0]),
        ([0.0, 1.0], [0.0, 0.0]),
        ([0.0, 0.5, 1.0], [0.0, float('nan'), 0.0])])
    def test_rejected_candidates(self, x, h):
        with pytest.raises(CandidateError):
            check_scaling_candidate(np.array(x), np.array(h))


class TestPruningRounds:
    def test_limit(self):
        _, exponent = pruning_rounds(4.0, 30)
        assert exponent == pytest.approx(0.75, abs=1e-9)

    def test_finite_rounds(self):
        deltas, exponent = pruning_rounds(3.63, 10)
        assert exponent == pytest.approx(0.72452, abs=1e-5)
        assert sum(deltas) == pytest.approx(1.0)
        assert all(a / b == pytest.approx(3.63) for a, b in zip(deltas, deltas[1:]))

    def test_single_round(self):
        deltas, exponent = pruning_rounds(3.63, 1)
        assert deltas == [1.0]
        assert exponent == pytest.approx(1.0 / (1.0 + 1.0 / 3.63))

    @pytest.mark.parametrize("mu,rounds", [(1.0, 3), (0.5, 3), (3.0, 0)])
    def test_bad_arguments(self, mu, rounds):
        with pytest.raises(ValueError):
            pruning_rounds(mu, rounds)


class TestPolarization:
    def test_no_transform(self):
        assert unpolarized_fraction(bec_reliability(0.5, 0), 3.0) == 1.0

    def test_all_zero_table(self):
        assert unpolarized_fraction(ReliabilityTable(4, np.zeros(16), exact=False), 3.0) == 0.0

    def test_exact_complement_matches_direct_count(self):
        table = bec_reliability(0.5, 6)
        direct = ReliabilityTable(6, table.values, exact=False)
        assert unpolarized_fraction(table, 2.0) == unpolarized_fraction(direct, 2.0)

    def test_nu_must_exceed_one(self):
        with pytest.raises(ValueError):
            unpolarized_fraction(bec_reliability(0.5, 3), 1.0)

    @pytest.mark.slow
    def test_fraction_shrinks_at_the_scaling_rate(self):
        scaled = {n: unpolarized_fraction(bec_reliability(0.5, n), 3.0) * 2.0 ** (n / 3.63)
                  for n in range(8, 25)}
        assert all(value <= 2.0 * scaled[8] for value in scaled.values())

    @pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
    def test_extreme_channels_give_extreme_rates(self, n):
        check = polarized_rate_check(n, 0.1)
        assert check['rate_good'] == 1.0
        assert check['rate_bad'] == 0.0
        assert check['max_z_good'] <= check['max_z_bound']
