import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_pd_rmse, brute_peaks
from unfolded_doa.array_signal import build_dictionary, generate_dataset, make_ula, scene_from_parts
from unfolded_doa.evaluation import (
    MatchConfig, angular_rmse, bin_angles_deg, bin_distance, detection_rate, evaluate_batch,
    match_targets, nmse_metric, peak_spectrum, snr_sweep, write_sweep,
)
from unfolded_doa.solvers import SolverConfig, fast_compact_admm


@pytest.fixture(scope="module")
def d256():
    return build_dictionary(make_ula(30), 256)


def on_grid_scene(dic, bins, amps):
    return scene_from_parts(dic, dic.grid[list(bins)], amps)


class TestPeaks:
    def test_single_bin(self):
        x = np.zeros(10)
        x[4] = 2
        np.testing.assert_array_equal(peak_spectrum(x), x)

    def test_all_zero(self):
        assert np.all(peak_spectrum(np.zeros(7)) == 0)

    def test_monotone_ramp_wraps(self):
        x = np.arange(1.0, 9.0)
        out = peak_spectrum(x)
        assert np.flatnonzero(out).tolist() == [7]
        np.testing.assert_array_equal(out, brute_peaks(x))

    def test_plateau_leftmost(self):
        x = np.array([0, 1, 3, 3, 3, 1, 0, 0.0])
        assert np.flatnonzero(peak_spectrum(x)).tolist() == [2]

    def test_plateau_that_is_a_shoulder_is_not_a_peak(self):
        x = np.array([0, 1, 1, 2, 0, 0.0])
        assert np.flatnonzero(peak_spectrum(x)).tolist() == [3]

    def test_flat_spectrum(self):
        assert np.flatnonzero(peak_spectrum(np.ones(5))).tolist() == [0]

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=3, max_size=24))
    def test_matches_brute_force(self, vals):
        x = np.asarray(vals, float)
        np.testing.assert_array_equal(peak_spectrum(x), brute_peaks(x))

    def test_batched(self, rng):
        x = rng.standard_normal((4, 20))
        for row, out in zip(x, peak_spectrum(x)):
            np.testing.assert_array_equal(out, brute_peaks(row))


class TestMatching:
    def test_exact(self, d256):
        sc = on_grid_scene(d256, [10, 50, 200], [1, 0.5j, -0.3])
        assert match_targets(sc, peak_spectrum(sc.sparse_x)) == [[10], [50], [200]]

    def test_radius_and_ratio_boundaries(self, d256):
        sc = on_grid_scene(d256, [100], [1.0])
        for offset, ratio, hit in [(2, 0.5, True), (3, 0.5, False), (2, 0.4, True), (1, 0.39, False),
                                   (-2, 0.4, True)]:
            pk = np.zeros(256)
            pk[100 + offset] = ratio
            assert bool(match_targets(sc, pk, MatchConfig(2, 0.4))[0]) is hit, (offset, ratio)

    def test_wraps_around(self, d256):
        sc = on_grid_scene(d256, [0], [1.0])
        pk = np.zeros(256)
        pk[255] = 1
        assert match_targets(sc, pk) == [[255]]

    def test_bin_distance(self):
        assert bin_distance(0, 255, 256) == 1
        assert bin_distance(10, 13, 256) == 3

    def test_detection_rate(self, d256):
        sc = on_grid_scene(d256, [1, 2, 3, 4], np.ones(4))
        assert detection_rate(sc, [[1], [2], [3], [4]]) == 1
        assert detection_rate(sc, [[], [], [], []]) == 0
        assert detection_rate(sc, [[1], [], [3], [4]]) == 0.75

    def test_empty_scene(self, d256):
        with pytest.raises(ValueError):
            detection_rate(scene_from_parts(d256, [], []), [])


class TestRmse:
    def test_angles(self, d256):
        th = bin_angles_deg(d256)
        assert th[128] == 0 and th[0] == pytest.approx(90)

    def test_perfect_support(self, d256):
        sc = on_grid_scene(d256, [30, 90], [1, 1])
        assert angular_rmse(d256, [sc], [sc.sparse_x]) == 0

    def test_one_bin_off_broadside(self, d256):
        sc = on_grid_scene(d256, [128], [1])
        est = np.zeros(256)
        est[129] = 1
        expect = math.degrees(math.asin(2 / 256))
        assert angular_rmse(d256, [sc], [est]) == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(0.448, abs=1e-3)

    def test_vectors_without_detections_are_excluded(self, d256):
        a = on_grid_scene(d256, [128], [1])
        b = on_grid_scene(d256, [40], [1])
        est_a = np.zeros(256)
        est_a[129] = 1
        both = angular_rmse(d256, [a, b], [est_a, np.zeros(256)])
        assert both == pytest.approx(angular_rmse(d256, [a], [est_a]))
        assert math.isnan(angular_rmse(d256, [b], [np.zeros(256)]))

    def test_closest_peak_scores(self, d256):
        sc = on_grid_scene(d256, [128], [1])
        est = np.zeros(256)
        est[[126, 129]] = [1, 0.5]
        assert angular_rmse(d256, [sc], [est]) == pytest.approx(math.degrees(math.asin(2 / 256)))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_matches_brute_force(self, seed):
        d = build_dictionary(make_ula(8), 32)
        rng = np.random.default_rng(seed)
        scenes, specs, pairs = [], [], []
        for _ in range(4):
            bins = rng.choice(32, size=3, replace=False)
            amps = rng.uniform(0.2, 1, 3) * np.exp(2j * np.pi * rng.uniform(size=3))
            sc = on_grid_scene(d, bins, amps)
            est = np.zeros(32)
            for b, a in zip(bins, amps):
                est[(b + rng.integers(-3, 4)) % 32] = abs(a) * rng.choice([0.3, 0.4, 0.9])
            scenes.append(sc)
            specs.append(est)
            pairs.append((list(bins), list(amps)))
        pds, rmse = brute_pd_rmse(d.grid, d.gamma, pairs, specs, 2, 0.4)
        got = [detection_rate(sc, match_targets(sc, peak_spectrum(e))) for sc, e in zip(scenes, specs)]
        assert got == pds
        ours = angular_rmse(d, scenes, specs)
        assert (math.isnan(ours) and math.isnan(rmse)) or ours == pytest.approx(rmse, rel=1e-12)


def test_nmse_metric(rng):
    x = rng.standard_normal(9) + 0j
    assert nmse_metric(x, x) == 0
    assert nmse_metric(np.zeros(9), x) == pytest.approx(1)
    assert nmse_metric(2 * x, x) == pytest.approx(1)
    with pytest.raises(ValueError):
        nmse_metric(x, np.zeros(9))


class TestSweep:
    def test_noiseless_exact_solver(self, d256):
        sc = on_grid_scene(d256, [77], [1.0])
        sample = generate_dataset(d256, 1, (1, 1), snr_spec=math.inf, seed=0)[0]
        sample.scene = sc
        sample.measurement = d256.matrix_a @ sc.sparse_x
        row = evaluate_batch(d256, [sample], [sc.sparse_x], math.inf, MatchConfig())
        assert row.mean_detection_rate == 1 and row.angular_rmse_deg == 0

    def test_sweep_and_files(self, ula16, tmp_path):
        tests = {s: generate_dataset(ula16, 20, snr_spec=s, seed=5) for s in (0.0, 20.0)}
        good = lambda y: fast_compact_admm(ula16, y, SolverConfig(lam=0.1, iterations=10))

        def broken(y):
            raise FloatingPointError("boom")

        reps = snr_sweep(ula16, {"fast": good, "broken": broken}, tests, MatchConfig())
        assert [r.estimator for r in reps] == ["fast", "broken"]
        assert [row.snr_db for row in reps[0].rows] == [0.0, 20.0]
        assert reps[1].rows[0].n_failed == 20
        write_sweep(reps, tmp_path / "s.csv", tmp_path / "s.json")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert rows[0].keys() >= {"estimator", "snr_db", "p_d", "rmse_deg", "nmse"}
        assert json.load(open(tmp_path / "s.json"))[0]["estimator"] == "fast"


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), phase=st.floats(0, 6.3), scale=st.floats(0.01, 100))
def test_detection_invariant_to_joint_phase_and_scale(seed, phase, scale):
    d = build_dictionary(make_ula(8), 32)
    rng = np.random.default_rng(seed)
    bins = rng.choice(32, size=3, replace=False)
    sc = on_grid_scene(d, bins, rng.uniform(0.2, 1, 3) * np.exp(1j * rng.uniform(0, 6, 3)))
    est = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    c = scale * np.exp(1j * phase)
    sc2 = on_grid_scene(d, bins, c * sc.amplitudes)
    a = detection_rate(sc, match_targets(sc, peak_spectrum(est)))
    b = detection_rate(sc2, match_targets(sc2, peak_spectrum(c * est)))
    assert a == b


def test_zero_radius_is_exact_support(d256):
    sc = on_grid_scene(d256, [20, 90], [1, 1])
    pk = np.zeros(256)
    pk[[20, 91]] = 1e-6
    assert match_targets(sc, pk, MatchConfig(0, 1e-9)) == [[20], []]
