import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakcal.errors import DataError
from weakcal.witness import (
    AffineLogit,
    CalibrationMap,
    CellAdd,
    Records,
    ScoredRecord,
    Temperature,
    WitnessFamily,
    apply_map,
    bin_index,
    logit,
    residual_pn,
    sigmoid,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestBinIndex:
    @pytest.mark.parametrize("score,K,expected", [(0.0, 10, 1), (1.0, 10, 10), (0.35, 10, 4),
                                                  (0.1, 10, 2), (0.5, 1, 1), (0.999, 4, 4)])
    def test_examples(self, score, K, expected):
        assert bin_index(score, K) == expected

    @pytest.mark.parametrize("score", [-1e-9, 1.0 + 1e-9, float("nan")])
    def test_out_of_domain(self, score):
        with pytest.raises(ValueError):
            bin_index(score, 10)

    @given(unit, unit, st.integers(1, 50))
    def test_monotone(self, a, b, K):
        lo, hi = sorted((a, b))
        assert bin_index(lo, K) <= bin_index(hi, K)

    @given(unit, st.integers(1, 50))
    def test_score_lies_in_its_interval(self, s, K):
        fam = WitnessFamily(0, K)
        lo, hi = fam.interval(bin_index(s, K))
        assert lo <= s and (s < hi or (hi == 1.0 and s == 1.0))

    def test_vectorised_bins_agree(self):
        s = np.linspace(0, 1, 1001)
        fam = WitnessFamily(2, 7)
        assert np.array_equal(fam.bins(s) + 1, [bin_index(v, 7) for v in s])


class TestApplyMap:
    def test_empty_map_is_identity(self):
        assert apply_map(CalibrationMap(), ScoredRecord(0.42)) == 0.42

    def test_single_cell_add(self):
        cmap = CalibrationMap([CellAdd(0, 0.3, 0.4, 0.05)])
        assert apply_map(cmap, ScoredRecord(0.35, (True, False))) == pytest.approx(0.40, abs=1e-15)
        assert apply_map(cmap, ScoredRecord(0.35, ())) == pytest.approx(0.40, abs=1e-15)

    def test_unit_temperature(self):
        assert apply_map(CalibrationMap([Temperature(1.0)]), ScoredRecord(0.7)) == pytest.approx(0.7, abs=1e-12)

    def test_group_gate(self):
        cmap = CalibrationMap([CellAdd(2, 0.0, 0.5, 0.1)])
        assert apply_map(cmap, ScoredRecord(0.2, (True, False))) == 0.2
        assert apply_map(cmap, ScoredRecord(0.2, (False, True))) == pytest.approx(0.3)

    def test_replay_uses_current_score(self):
        # the first step moves 0.35 into [0.4, 0.5), where the second step fires
        cmap = CalibrationMap([CellAdd(0, 0.3, 0.4, 0.06), CellAdd(0, 0.4, 0.5, 0.1)])
        assert apply_map(cmap, ScoredRecord(0.35)) == pytest.approx(0.51)

    def test_last_bin_closed(self):
        cmap = CalibrationMap([CellAdd(0, 0.9, 1.0, -0.05)])
        assert apply_map(cmap, ScoredRecord(1.0)) == pytest.approx(0.95)

    def test_map_refers_to_missing_group(self):
        with pytest.raises(DataError):
            apply_map(CalibrationMap([CellAdd(3, 0, 1, 0.1)]), ScoredRecord(0.5, (True,)))

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(1, 10), st.floats(-0.3, 0.3)), max_size=12),
           st.lists(unit, min_size=1, max_size=20), st.integers(0, 2**31))
    def test_cell_adds_bounded_and_clipped(self, raw_steps, scores, seed):
        steps = [CellAdd(g, (b - 1) / 10, b / 10, d) for g, b, d in raw_steps]
        groups = np.random.default_rng(seed).random((len(scores), 2)) < 0.5
        out = CalibrationMap(steps).apply(scores, groups)
        total = sum(abs(s.delta) for s in steps)
        assert np.all((out >= 0.0) & (out <= 1.0))
        assert np.all(np.abs(out - np.asarray(scores)) <= total + 1e-12)

    @given(st.floats(0.5, 2.0), st.floats(0.5, 2.0))
    def test_temperature_composes(self, b1, b2):
        s = np.linspace(0.01, 0.99, 99)
        two = CalibrationMap([Temperature(b1), Temperature(b2)]).apply(s)
        one = Temperature(b1 * b2).apply(s)
        assert np.max(np.abs(two - one)) <= 1e-12

    def test_logit_steps_clip_extremes(self):
        out = CalibrationMap([AffineLogit(3.0, 1.0)]).apply([0.0, 1.0])
        assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))
        assert out[0] < 1e-15 and out[1] > 1 - 1e-15
        assert logit(0.0) == pytest.approx(np.log(1e-6 / (1 - 1e-6)))

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            Temperature(0.0)

    def test_round_trip(self):
        cmap = CalibrationMap([CellAdd(1, 0.2, 0.3, -0.05), Temperature(1.7), AffineLogit(0.5, -1.0)])
        again = CalibrationMap.from_dict(cmap.to_dict())
        s = np.linspace(0, 1, 51)
        g = np.tile([True, False], (51, 1))
        assert again.steps == cmap.steps
        assert np.array_equal(again.apply(s, g), cmap.apply(s, g))

    def test_sigmoid_is_inverse_of_logit(self):
        p = np.linspace(0.001, 0.999, 50)
        assert np.allclose(sigmoid(logit(p)), p, atol=1e-12)


def brute_force_residual(score, groups, label, K):
    n, m = groups.shape
    moments = np.zeros((m + 1, K))
    mass = np.zeros((m + 1, K))
    for g in range(m + 1):
        for b in range(1, K + 1):
            for i in range(n):
                in_group = g == 0 or groups[i, g - 1]
                if in_group and bin_index(score[i], K) == b:
                    moments[g, b - 1] += (label[i] - score[i]) / n
                    mass[g, b - 1] += 1.0 / n
    return moments, mass


class TestResidualPN:
    def test_two_record_example(self):
        recs = Records([0.2, 0.2], np.zeros((2, 0), bool), label=[1, 0])
        table = residual_pn(recs, WitnessFamily(0, 10))
        assert table.moments[0, 2] == pytest.approx(0.3, abs=1e-15)
        assert np.count_nonzero(table.moments) == 1

    def test_zero_residual(self):
        recs = Records(np.ones(5), np.ones((5, 2), bool), label=np.ones(5))
        assert not np.any(residual_pn(recs, WitnessFamily(2, 10)).moments)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n, m, K = 200, 3, 10
        score, groups = rng.random(n), rng.random((n, m)) < 0.4
        score[:5] = [0.0, 1.0, 0.1, 0.5, 0.9]
        label = rng.integers(0, 2, n)
        table = residual_pn(Records(score, groups, label), WitnessFamily(m, K))
        moments, mass = brute_force_residual(score, groups, label, K)
        assert np.allclose(table.moments, moments, atol=1e-12)
        assert np.allclose(table.active_mass, mass, atol=1e-12)

    @given(st.integers(0, 2**31), st.integers(1, 60), st.integers(1, 12))
    @settings(max_examples=40)
    def test_sum_rule_and_mass(self, seed, n, K):
        rng = np.random.default_rng(seed)
        recs = Records(rng.random(n), rng.random((n, 2)) < 0.5, rng.integers(0, 2, n))
        t = residual_pn(recs, WitnessFamily(2, K))
        assert abs(t.moments[0].sum() - (recs.label.mean() - recs.score.mean())) <= 1e-12
        assert t.active_mass[0].sum() == pytest.approx(1.0, abs=1e-12)

    def test_requires_labels(self):
        with pytest.raises(DataError):
            residual_pn(Records([0.5], np.zeros((1, 0), bool)), WitnessFamily(0))

    def test_group_count_mismatch(self):
        with pytest.raises(DataError):
            residual_pn(Records([0.5], np.zeros((1, 1), bool), [1]), WitnessFamily(2))


class TestRecords:
    @pytest.mark.parametrize("kw", [dict(score=1.2), dict(score=0.5, confidence=0.0), dict(score=0.5, label=2)])
    def test_scored_record_invariants(self, kw):
        with pytest.raises(DataError):
            ScoredRecord(**kw)

    def test_from_records(self):
        recs = Records.from_records([ScoredRecord(0.1, (True,), 1), ScoredRecord(0.7, (False,), 0)])
        assert recs.m == 1 and list(recs.label) == [1, 0] and recs.conf is None

    def test_bad_label_column(self):
        with pytest.raises(DataError):
            Records([0.5, 0.5], np.zeros((2, 0), bool), label=[0, 3])
