import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from mbdenoise.eval import (
    best_method_attribution,
    error_difference_map,
    error_maps,
    lesion_conspicuity_diff,
    lesion_error_histograms,
    pure_lesion_errors,
    theoretical_floor,
)
from mbdenoise.eval.plotting import plot_attribution, plot_difference_maps, plot_histograms, plot_loss_curves, plot_maps
from mbdenoise.simulator import add_rician_noise
from mbdenoise.volume import Volume


def test_floor_monte_carlo(rng):
    clean = rng.uniform(0, 100, 100_000)
    i1 = clean + rng.normal(0, 10, clean.size)
    i2 = clean + rng.normal(0, 10, clean.size)
    # Var of the sample variance of 2*sigma^2 noise: sd ~ 200*sqrt(2/n) -> ~0.45 on the floor
    assert theoretical_floor(i1, i2) == pytest.approx(100.0, abs=2.0)
    assert theoretical_floor(i1, i2, "MAE") == pytest.approx(10.0, abs=0.1)


def test_floor_identical_and_errors(rng):
    v = Volume(rng.normal(size=(4, 4, 4)))
    assert theoretical_floor(v, v) == 0.0 and theoretical_floor(v, v, "MAE") == 0.0
    with pytest.raises(ValueError):
        theoretical_floor(v, Volume(np.zeros((4, 4, 3))))
    with pytest.raises(ValueError):
        theoretical_floor(v, v, "L3")


def test_floor_mask(rng):
    a = np.zeros(10)
    b = np.concatenate([np.zeros(5), np.full(5, 100.0)])
    assert theoretical_floor(a, b, mask=np.arange(10) < 5) == 0.0


def test_error_maps(rng):
    clean = Volume(rng.uniform(1, 10, (5, 5, 2)))
    assert np.all(error_maps([clean, clean], clean).data == 0)
    noisy = clean.with_data(clean.data + rng.normal(size=clean.data.shape))
    assert np.allclose(error_maps([noisy], clean).data, np.abs(noisy.data - clean.data))
    frac = np.zeros((5, 5, 2))
    frac[1, 1, 0] = 0.3
    full, lesion = error_maps([noisy], clean, frac)
    assert np.count_nonzero(lesion.data) == 1 and lesion.data[0, 1, 1, 0] == full.data[0, 1, 1, 0]
    with pytest.raises(ValueError):
        error_maps([], clean)
    with pytest.raises(ValueError):
        error_maps([Volume(np.zeros((5, 5, 3)))], clean)


def test_error_map_rayleigh_air():
    sigma = 3.0
    air = Volume(np.zeros((20, 20, 10)))
    reps = [add_rician_noise(air, sigma, seed=s) for s in range(20)]
    assert error_maps(reps, air).data.mean() == pytest.approx(sigma * np.sqrt(np.pi / 2), rel=0.01)


def test_difference_map(rng):
    a = Volume(np.zeros((3, 3, 1)))
    b = Volume(np.ones((3, 3, 1)))
    assert np.all(error_difference_map(a, b).data == 1.0)
    assert np.all(error_difference_map(a, a).data == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_difference_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = Volume(rng.uniform(0, 5, (3, 4, 2))), Volume(rng.uniform(0, 5, (3, 4, 2)))
    assert np.array_equal(error_difference_map(a, b).data, -error_difference_map(b, a).data)


def test_conspicuity_clean_pair():
    base = np.full((4, 4, 1), 10.0)
    les = base.copy()
    les[1:3, 1:3] = 25.0
    diff = lesion_conspicuity_diff(Volume(les), Volume(base))
    assert diff.data.sum() == 4 * 15.0 and diff.data.max() == 15.0


def test_histogram_zero_spike():
    s = lesion_error_histograms(np.zeros(50))
    assert s.fraction_below_one == 1.0 and s.signed.total == 50
    assert list(s.signed.counts) == [50] and s.signed.edges[0] == 0.0
    assert list(s.absolute.counts) == [50]


def test_histogram_gaussian(rng):
    s = lesion_error_histograms(rng.normal(0, 2, 200_000), scale=2.0)
    assert s.fraction_below_one == pytest.approx(2 * norm.cdf(1) - 1, abs=0.005)
    assert s.mean_abs == pytest.approx(np.sqrt(2 / np.pi), abs=0.01)
    assert s.std == pytest.approx(1.0, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=200))
def test_histogram_mass_conserved(values):
    s = lesion_error_histograms(values)
    assert s.signed.total == s.absolute.total == s.count == len(values)
    assert len(s.signed.edges) == len(s.signed.counts) + 1
    assert s.signed.edges[0] <= min(values) and s.signed.edges[-1] > max(values)


def test_histogram_empty():
    with pytest.raises(ValueError):
        lesion_error_histograms([])


def test_pure_lesion_errors():
    clean = Volume(np.zeros((3, 1, 1)))
    den = Volume(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
    frac = np.array([1.0, 0.5, 1.0]).reshape(3, 1, 1)
    assert list(pure_lesion_errors(den, clean, frac)) == [1.0, 3.0]


def test_attribution_dominance_and_ties():
    att = best_method_attribution({"N2N": [2.0, 3.0], "MBD": [1.0, 1.0], "ALGe": [5.0, 9.0]})
    assert att.win_rates == {"MBD": 1.0, "N2N": 0.0, "ALGe": 0.0}
    att = best_method_attribution({"MPPCA": [1.0, 2.0], "N2N": [1.0, 1.0]})
    assert att.winner_names() == ["N2N", "N2N"] and list(att.tie) == [True, False]
    with pytest.raises(ValueError):
        best_method_attribution({"MBD": [1.0]})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_attribution_is_argmin(seed, n):
    rng = np.random.default_rng(seed)
    maes = {m: rng.integers(0, 4, n).astype(float) for m in ("ALGe", "MBD", "CNNe")}
    att = best_method_attribution(maes)
    for i, m in enumerate(att.winner_names()):
        assert maes[m][i] == min(v[i] for v in maes.values())
    assert sum(att.win_rates.values()) == pytest.approx(1.0)


def test_plots_written(tmp_path, rng):
    maps = {"MBD": rng.normal(size=(8, 8)), "N2N": rng.normal(size=(8, 8))}
    assert plot_maps(maps, tmp_path / "m.png").stat().st_size > 0
    assert plot_difference_maps(maps, tmp_path / "d.png").exists()
    summ = {"MBD": lesion_error_histograms(rng.normal(size=500))}
    assert plot_histograms(summ, tmp_path / "h.png").exists()
    assert plot_histograms(summ, tmp_path / "a.png", which="absolute").exists()
    assert plot_loss_curves({"MBD": [3.0, 2.0, 1.5]}, tmp_path / "c.png", floor=1.4).exists()
    assert plot_attribution(rng.uniform(size=(20, 3)), ["MBD"] * 15 + ["ALGe"] * 5, tmp_path / "s.png").exists()
