#!/usr/bin/env python3

import numpy as np
import pandas as pd
import pytest

import ipfsim.core as core
import ipfsim.mapper as mapper

SMALL = {
    "n_alpha": 6,
    "n_seeds": 8,
    "n_steps": 400,
    "tail": 60,
    "grid": 3,
    "beta_max": 0.3,
}


# =============================================================================
# Intervals
# =============================================================================
def test_interval_arithmetic():
    fifteen = mapper.Interval.from_semitones(15.0)
    assert fifteen.ratio == pytest.approx(0.4204, abs=1e-3)
    assert 1.0 / fifteen.ratio == pytest.approx(2.378, abs=1e-3)
    measured = mapper.Interval.from_ratio(2.378)
    assert measured.ratio == pytest.approx(0.4204, abs=1e-3)
    assert measured.semitones == pytest.approx(15.0, abs=1e-2)
    assert mapper.Interval.from_ratio(0.5).semitones == pytest.approx(12.0, abs=1e-12)


@pytest.mark.parametrize("semitones", [0.0, 0.5, 7.0, 15.0, 26.5])
def test_interval_semitone_consistency(semitones):
    interval = mapper.Interval.from_semitones(semitones)
    assert 0.0 < interval.ratio <= 1.0
    assert interval.semitones == pytest.approx(semitones, abs=1e-9)


def test_interval_rejects_invalid_ratio():
    for ratio in (0.0, 1.5, -0.2):
        with pytest.raises(core.ParameterError):
            mapper.Interval(ratio)


def test_extract_interval():
    period_two = core.RegimeReport("period-2", (1.0, 2.378), 2)
    assert mapper.extract_interval(period_two).ratio == pytest.approx(0.4205, abs=1e-4)
    assert mapper.extract_interval(period_two).semitones == pytest.approx(15.0, abs=1e-2)
    octave = core.RegimeReport("period-2", (1.0, 2.0), 2)
    assert mapper.extract_interval(octave).semitones == pytest.approx(12.0)
    fixed = core.RegimeReport("fixed-point", (0.7,), 1)
    assert mapper.extract_interval(fixed).ratio == 1.0
    assert mapper.extract_interval(core.RegimeReport("chaotic")) is None
    assert mapper.extract_interval(core.RegimeReport("divergent")) is None
    assert mapper.extract_interval(core.RegimeReport("period-4", (1.0, 1.5, 2.0, 2.5), 4)) is None


# =============================================================================
# Grids and protocol
# =============================================================================
def test_default_grids():
    alphas = mapper.alpha_grid()
    assert alphas.size == 200
    assert alphas[0] > 0 and alphas[-1] == 1.0
    np.testing.assert_allclose(np.diff(alphas), 1 / 200)
    seeds = mapper.seed_grid()
    assert seeds.size == 150
    assert seeds[0] > 0 and seeds[-1] == 5.0
    assert mapper.beta_grid().size == 120


def test_protocol_validation():
    with pytest.raises(core.ParameterError):
        mapper.alpha_grid({"n_alpha": 0})
    with pytest.raises(core.ParameterError):
        mapper.seed_grid({"tol_semitones": -1})


# =============================================================================
# Cell quantities
# =============================================================================
def test_reliability_period_two_region_against_unison():
    protocol = {"n_seeds": 20, "n_steps": 1000, "tail": 100}
    assert mapper.reliability(0.0, 0.0, 0.45, mapper.Interval(1.0), protocol) == 0.0


def test_reliability_unison_when_superstable():
    protocol = {"n_seeds": 20, "n_steps": 1000, "tail": 100}
    assert mapper.reliability(0.0, 0.0, 1.0, mapper.Interval(1.0), protocol) == 1.0


def test_reliability_divergent_cell():
    assert mapper.reliability(0.0, 0.0, 0.01, mapper.Interval(1.0), {"n_seeds": 20}) == 0.0


def test_reliability_monotone_in_tolerance():
    target = mapper.Interval.from_semitones(4.0)
    narrow = mapper.reliability(0.05, 0.2, 0.4, target, {"n_seeds": 30, "tol_semitones": 0.25})
    wide = mapper.reliability(0.05, 0.2, 0.4, target, {"n_seeds": 30, "tol_semitones": 3.0})
    assert narrow <= wide


def test_interval_derivative():
    # fixed points throughout: ratio stays 1
    assert mapper.interval_derivative(0.0, 0.0, 0.8) == 0.0
    # chaos on both sides has no interval
    assert mapper.interval_derivative(0.0, 0.0, 0.376) == float("inf")
    # alpha + h leaves (0, 1]
    assert mapper.interval_derivative(0.0, 0.0, 1.0) == float("inf")
    inside = mapper.interval_derivative(0.0, 0.0, 0.45)
    assert 0.0 < inside < 10.0


# =============================================================================
# Maps
# =============================================================================
@pytest.fixture(scope="module")
def unison_map():
    return mapper.likelihood_map(None, mapper.Interval(1.0), SMALL)


def test_likelihood_map_shape_and_normalisation(unison_map):
    assert unison_map.likelihood.shape == (3, 3)
    assert unison_map.likelihood.max() == 1.0
    assert not unison_map.is_empty
    assert np.all(unison_map.likelihood >= 0)
    assert np.all((unison_map.reliability >= 0) & (unison_map.reliability <= 1))
    assert unison_map.cell(0, 0)["mark"] in (mapper.MARK_INTERVAL, mapper.MARK_STABLE)


def test_likelihood_map_empty_for_unreachable_target():
    protocol = dict(SMALL, grid=2)
    lmap = mapper.likelihood_map(None, mapper.Interval.from_semitones(60.0), protocol)
    assert lmap.is_empty
    with pytest.raises(core.ParameterError):
        mapper.centroid(lmap)


def test_likelihood_maps_match_single_maps(unison_map):
    octave = mapper.Interval.from_semitones(12.0)
    both = mapper.likelihood_maps(None, [mapper.Interval(1.0), octave], SMALL)
    np.testing.assert_array_equal(both[0].likelihood, unison_map.likelihood)
    single = mapper.likelihood_map(None, octave, SMALL)
    np.testing.assert_array_equal(both[1].likelihood, single.likelihood)


def test_parallel_map_matches_serial(unison_map):
    parallel = mapper.likelihood_map(None, mapper.Interval(1.0), dict(SMALL, jobs=2))
    np.testing.assert_array_equal(parallel.likelihood, unison_map.likelihood)
    np.testing.assert_array_equal(parallel.mark, unison_map.mark)


def test_max_interval_map_stable_cell():
    lmap = mapper.max_interval_map((np.array([0.0]), np.array([0.0])), {"n_alpha": 20, "n_steps": 600, "tail": 100})
    # alpha grid 0.05 .. 1.0 contains 0.45, inside the period-2 region
    assert lmap.mark[0, 0] == mapper.MARK_INTERVAL
    assert lmap.max_interval[0, 0] > 0
    stable = mapper.max_interval_map(
        (np.array([0.0]), np.array([0.0])), {"n_alpha": 4, "n_steps": 600, "tail": 100}
    )
    # alpha grid 0.25 .. 1.0: 0.25 diverges, 0.5 is marginal, 0.75 and 1.0 are fixed points
    assert stable.mark[0, 0] in (mapper.MARK_STABLE, mapper.MARK_INTERVAL)
    assert np.isnan(stable.reliability).all()


def _oracle(beta1_axis, beta2_axis, target, protocol):
    """Straightforward per-trajectory reimplementation of the map."""
    parM = mapper.DefaultMapProtocol()
    parM.update(protocol)
    n = parM["n_alpha"]
    alphas = np.linspace(1.0 / n, 1.0, n)
    seeds = np.linspace(parM["seed_max"] / parM["n_seeds"], parM["seed_max"], parM["n_seeds"])
    h = parM["h"]

    def regime(betas, alpha, g0):
        trajectory = core.iterate(core.IpfParams(alpha, betas, g0=g0), parM["n_steps"])
        return core.classify_regime(trajectory, parM["tail"], parM["tol"], parM["p_max"])

    def interval(betas, alpha, g0):
        return mapper.extract_interval(regime(betas, alpha, g0))

    raw = np.zeros((len(beta1_axis), len(beta2_axis)))
    chosen = np.full(raw.shape, np.nan)
    widest = np.full(raw.shape, np.nan)
    marks = np.full(raw.shape, mapper.MARK_NONE, dtype=object)
    for i, b1 in enumerate(beta1_axis):
        for j, b2 in enumerate(beta2_axis):
            best = 0.0
            for alpha in alphas:
                report = regime((b1, b2), alpha, parM["g0"])
                here = mapper.extract_interval(report)
                if report.period == 2 and here is not None:
                    widest[i, j] = max(here.semitones, np.nan_to_num(widest[i, j], nan=-1.0))
                    marks[i, j] = mapper.MARK_INTERVAL
                elif report.kind == "fixed-point" and marks[i, j] == mapper.MARK_NONE:
                    marks[i, j] = mapper.MARK_STABLE
                if here is None or abs(here.semitones - target.semitones) > parM["tol_semitones"]:
                    continue
                if not (alpha - h > 0 and alpha + h <= 1.0):
                    continue
                lo = interval((b1, b2), alpha - h, parM["g0"])
                hi = interval((b1, b2), alpha + h, parM["g0"])
                if lo is None or hi is None:
                    continue
                derivative = abs(hi.ratio - lo.ratio) / (2 * h)
                hits = 0
                for g0 in seeds:
                    seeded = interval((b1, b2), alpha, g0)
                    if seeded is not None and abs(seeded.semitones - target.semitones) <= parM["tol_semitones"]:
                        hits += 1
                likelihood = (hits / len(seeds)) / max(derivative, parM["eps"])
                if likelihood > best:
                    best = likelihood
                    chosen[i, j] = alpha
            raw[i, j] = best
            if marks[i, j] == mapper.MARK_STABLE:
                widest[i, j] = 0.0
    return raw / raw.max() if raw.max() > 0 else raw, chosen, widest, marks


@pytest.mark.parametrize("semitones", [0.0, 12.0])
def test_map_matches_brute_force(semitones):
    axis = np.linspace(0.0, 0.3, 8)
    target = mapper.Interval.from_semitones(semitones)
    protocol = {"n_alpha": 10, "n_seeds": 20, "n_steps": 400, "tail": 100}
    lmap = mapper.likelihood_map((axis, axis), target, protocol)
    expected, chosen, widest, marks = _oracle(axis, axis, target, protocol)
    np.testing.assert_array_equal(lmap.mark, marks.astype(str))
    np.testing.assert_allclose(lmap.max_interval, widest, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(lmap.likelihood, expected, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(np.isnan(lmap.alpha), np.isnan(chosen))
    np.testing.assert_allclose(lmap.alpha[~np.isnan(chosen)], chosen[~np.isnan(chosen)])


def test_small_interval_near_flip_is_periodic():
    protocol = mapper.DefaultMapProtocol()
    assert protocol["tol"] == 1e-4
    trajectory = core.iterate(core.IpfParams(0.48, (0.02, 0.33), g0=2.5), protocol["n_steps"])
    strict = core.classify_regime(trajectory, protocol["tail"], 1e-6, protocol["p_max"])
    assert strict.kind == "chaotic"
    report = core.classify_regime(trajectory, protocol["tail"], protocol["tol"], protocol["p_max"])
    assert report.period == 2
    assert mapper.extract_interval(report).semitones == pytest.approx(0.76, abs=0.05)


# =============================================================================
# Centroids
# =============================================================================
def _synthetic_map(likelihood):
    likelihood = np.asarray(likelihood, dtype=float)
    shape = likelihood.shape
    nan = np.full(shape, np.nan)
    return mapper.LikelihoodMap(
        np.linspace(0.0, 0.1 * (shape[0] - 1), shape[0]),
        np.linspace(0.0, 0.1 * (shape[1] - 1), shape[1]),
        nan, np.full(shape, mapper.MARK_NONE), nan, nan, likelihood, nan,
        target=mapper.Interval(1.0),
    )


def test_centroid_single_cell():
    result = mapper.centroid(_synthetic_map([[0.0, 0.2], [1.0, 0.5]]))
    assert (result.beta1, result.beta2) == pytest.approx((0.1, 0.0))
    assert result.region_mask == frozenset({(1, 0)})


def test_centroid_symmetric_pair():
    result = mapper.centroid(_synthetic_map([[1.0, 0.0], [0.0, 1.0]]))
    assert (result.beta1, result.beta2) == pytest.approx((0.05, 0.05))
    assert result.region_cell_count == 2


def test_centroid_inside_region_bounding_box(unison_map):
    result = mapper.centroid(unison_map)
    rows = [i for i, _ in result.region_mask]
    cols = [j for _, j in result.region_mask]
    assert unison_map.beta1_axis[min(rows)] <= result.beta1 <= unison_map.beta1_axis[max(rows)]
    assert unison_map.beta2_axis[min(cols)] <= result.beta2 <= unison_map.beta2_axis[max(cols)]


def test_centroid_invariant_under_rescaling():
    likelihood = np.array([[0.3, 0.95], [1.0, 0.2]])
    first = mapper.centroid(_synthetic_map(likelihood))
    second = mapper.centroid(_synthetic_map(likelihood * 7.0))
    assert (first.beta1, first.beta2) == pytest.approx((second.beta1, second.beta2))


def test_catalog_scan_singleton_matches_pipeline(unison_map):
    results = mapper.catalog_scan([0.0], SMALL)
    expected = mapper.centroid(unison_map)
    assert len(results) == 1
    assert (results[0].beta1, results[0].beta2) == (expected.beta1, expected.beta2)
    assert results[0].region_mask == expected.region_mask


def test_catalog_scan_keeps_empty_targets():
    results = mapper.catalog_scan([0.0, 60.0], dict(SMALL, grid=2))
    assert len(results) == 2
    assert np.isnan(results[1].beta1)
    with pytest.raises(core.ParameterError):
        mapper.catalog_scan([], SMALL)


# =============================================================================
# Files
# =============================================================================
def test_sample_catalog():
    values = mapper.sample_catalog()
    assert len(values) >= 8
    assert min(values) == 0.5 and max(values) == 26.5


def test_load_catalog(tmp_path):
    path = tmp_path / "catalog.txt"
    path.write_text("# intervals\n2.5\n\n12  # octave\n")
    assert mapper.load_catalog(path) == [2.5, 12.0]
    path.write_text("two\n")
    with pytest.raises(core.ParameterError):
        mapper.load_catalog(path)
    path.write_text("# nothing yet\n")
    with pytest.raises(core.ParameterError):
        mapper.load_catalog(path)


def test_map_csv_round_trip(tmp_path, unison_map):
    path = tmp_path / "map.csv"
    mapper.write_map_csv(unison_map, path)
    df = pd.read_csv(path)
    assert list(df.columns)[:6] == [
        "beta1", "beta2", "max_interval_semitones", "reliability", "derivative", "likelihood",
    ]
    restored = mapper.read_map_csv(path)
    np.testing.assert_allclose(restored.likelihood, unison_map.likelihood, rtol=1e-11)
    np.testing.assert_array_equal(restored.mark, unison_map.mark)
    result = mapper.centroid(restored)
    assert result.region_mask == mapper.centroid(unison_map).region_mask


def test_centroid_csv(tmp_path, unison_map):
    path = tmp_path / "centroids.csv"
    mapper.write_centroid_csv([mapper.centroid(unison_map)], path)
    df = pd.read_csv(path)
    assert list(df.columns) == ["target_semitones", "beta1_centroid", "beta2_centroid", "region_cell_count"]
    assert df["target_semitones"][0] == 0.0


# =============================================================================
# Reproduction checks
# =============================================================================
@pytest.mark.slow
def test_fifteen_semitone_region():
    lmap = mapper.likelihood_map(None, mapper.Interval.from_semitones(15.0), {"grid": 60, "jobs": 4})
    result = mapper.centroid(lmap)
    rows = [i for i, _ in result.region_mask]
    cols = [j for _, j in result.region_mask]
    b1_lo, b1_hi = lmap.beta1_axis[min(rows)], lmap.beta1_axis[max(rows)]
    b2_lo, b2_hi = lmap.beta2_axis[min(cols)], lmap.beta2_axis[max(cols)]
    assert b1_lo <= 0.05 and b1_hi >= 0.0
    assert b2_lo <= 0.36 and b2_hi >= 0.3
    assert result.beta2 > result.beta1


@pytest.mark.slow
def test_catalog_trends():
    intervals = [2.0, 4.0, 6.0, 8.5, 11.0, 15.0, 20.0, 26.0]
    results = mapper.catalog_scan(intervals, {"grid": 40, "jobs": 4})
    found = [r for r in results if not np.isnan(r.beta1)]
    assert results[-1].beta2 < results[0].beta2
    assert sum(r.beta1 < r.beta2 for r in found) >= 0.9 * len(found)
