import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbdenoise.denoisers import (
    MethodConfig,
    alge_extrapolate,
    denoise,
    denoise_windows,
    input_combinations,
    input_configuration_sweep,
    mp_signal_count,
    mppca_denoise,
)
from mbdenoise.nn import ConfigError, Network, TrainingConfig, extract_patches, input_scale, output_scale, slices_dataset, train
from mbdenoise.volume import Volume


def mono(s0, d, b, shape=(4, 4, 2)):
    return Volume(np.broadcast_to(s0 * np.exp(-d * b / 1000.0), shape).copy(), labels=(f"b={b:g}",))


# -- ALGe --------------------------------------------------------------------------


def test_alge_closed_form():
    out = alge_extrapolate(mono(200, 0.8, 0), mono(200, 0.8, 1000), 0, 1000, 2000)
    assert np.max(np.abs(out.data - 200 * np.exp(-1.6))) < 1e-9
    assert out.data[0, 0, 0, 0] == pytest.approx(40.38, abs=5e-3)
    assert out.labels == ("b=2000",)


def test_alge_identity_at_b1(rng):
    s1 = Volume(rng.uniform(1, 100, (3, 3, 3)))
    s2 = Volume(rng.uniform(1, 100, (3, 3, 3)))
    assert np.array_equal(alge_extrapolate(s1, s2, 0, 1000, 0).data, s1.data)


def test_alge_defects():
    s1 = Volume(np.full((2, 2, 1), 100.0))
    d2 = np.full((2, 2, 1), 50.0)
    d2[1, 0, 0] = 0.0
    d2[0, 1, 0] = -3.0
    out, mask = alge_extrapolate(s1, Volume(d2), 0, 1000, 4000, return_defects=True)
    assert out.data[0, 1, 0, 0] == 0 and out.data[0, 0, 1, 0] == 0
    assert mask.values.sum() == 2 and mask.values[1, 0, 0] == 1
    assert out.data[0, 0, 0, 0] == pytest.approx(100 * 0.5**4)


def test_alge_errors():
    v = Volume(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        alge_extrapolate(v, v, 1000, 1000, 2000)
    with pytest.raises(ValueError):
        alge_extrapolate(v, Volume(np.ones((2, 2, 3))), 0, 1000, 2000)
    with pytest.raises(ConfigError):
        MethodConfig("ALGe", (1000, 1000), 4000)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(1.0, 5000.0),
    st.floats(0.0, 3.0),
    st.floats(0.0, 5000.0),
    st.floats(0.0, 5000.0),
    st.floats(0.0, 5000.0),
)
def test_alge_exact_property(s0, d, b1, b2, bt):
    if abs(b1 - b2) < 50:
        b2 = b1 + 100.0
    s1, s2 = mono(s0, d, b1), mono(s0, d, b2)
    if s1.data.min() <= 0 or s2.data.min() <= 0:
        return
    truth = s0 * np.exp(-d * bt / 1000.0)
    out = alge_extrapolate(s1, s2, b1, b2, bt)
    assert np.max(np.abs(out.data - truth)) <= 1e-9 * max(1.0, s0)


# -- MPPCA -------------------------------------------------------------------------


def test_mp_signal_count_examples():
    assert mp_signal_count(np.array([[1.0, 1.0, 1.0]]), 125)[0] == 0
    assert mp_signal_count(np.array([[1.0, 1.0, 50.0]]), 125)[0] == 1
    assert mp_signal_count(np.array([[1.0, 40.0, 50.0]]), 125)[0] == 2


def test_mppca_pure_noise(rng):
    v = Volume(rng.normal(0, 1, (3, 12, 12, 12)))
    out = mppca_denoise(v, 2)
    assert out.dims == v.dims and out.channels == 3
    assert np.var(out.data) < 0.3 * np.var(v.data)


def test_mppca_windows_pure_noise_oracle(rng):
    x = rng.normal(0, 2, (100, 125, 8))
    out, sigma = denoise_windows(x, return_sigma=True)
    assert np.var(out - out.mean(axis=1, keepdims=True)) < 0.3 * np.var(x)
    assert np.median(sigma) == pytest.approx(2.0, rel=0.2)


def _rank1(rng, shape=(9, 9, 9), n=4):
    pattern = rng.uniform(50, 150, shape)
    scales = np.linspace(1.0, 0.2, n)
    return scales[:, None, None, None] * pattern[None]


def test_mppca_rank1_passthrough(rng):
    clean = _rank1(rng)
    out = mppca_denoise(Volume(clean), 2)
    assert np.max(np.abs(out.data - clean)) < 1e-8


def test_mppca_snr10_improves(rng):
    clean = _rank1(rng, (12, 12, 12), 6)
    sigma = clean.mean() / 10
    noisy = clean + rng.normal(0, sigma, clean.shape)
    out = mppca_denoise(Volume(noisy), 2)
    assert np.mean((out.data - clean) ** 2) < np.mean((noisy - clean) ** 2)


def test_mppca_degenerate_passthrough():
    v = Volume(np.full((3, 5, 5, 5), 7.0))
    assert np.array_equal(mppca_denoise(v, 2).data, v.data)


def test_mppca_errors(rng):
    with pytest.raises(ValueError):
        mppca_denoise(Volume(rng.normal(size=(2, 6, 6, 6))), 2)
    with pytest.raises(ValueError):
        mppca_denoise(Volume(rng.normal(size=(3, 4, 6, 6))), 2)
    with pytest.raises(ValueError):
        mppca_denoise(Volume(rng.normal(size=(3, 6, 6, 6))), 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 6), st.floats(0.1, 100.0))
def test_mppca_never_increases_noise_variance(seed, n, sigma):
    rng = np.random.default_rng(seed)
    v = Volume(rng.normal(0, sigma, (n, 7, 7, 7)))
    out = mppca_denoise(v, 1)
    for c in range(n):
        assert np.var(out.data[c]) <= np.var(v.data[c])


# -- configuration and dispatch ----------------------------------------------------


def test_method_config_rules():
    MethodConfig("MBD", (0, 1000, 4000), 4000)
    MethodConfig("N2N", (4000,), 4000)
    MethodConfig("CNNe", (0, 1000), 4000)
    MethodConfig("MPPCA", (0, 1000, 4000), 4000)
    bad = [
        ("MBD", (4000,), 4000),
        ("MBD", (0, 1000), 4000),
        ("N2N", (1000, 4000), 4000),
        ("CNNe", (0, 4000), 4000),
        ("ALGe", (0,), 4000),
        ("Magic", (0,), 0),
        ("MBD", (4000, 4000), 4000),
    ]
    for args in bad:
        with pytest.raises(ConfigError):
            MethodConfig(*args)
    with pytest.raises(ConfigError):
        MethodConfig("MPPCA", (0, 1000, 4000), 4000, patch_radius=0)
    assert MethodConfig("CNNe", (0, 1000), 4000).mode == "direct"
    with pytest.raises(ConfigError):
        MethodConfig("MBD", (0, 4000), 4000).load_network()


def _dwi(rng, shape=(8, 8, 6)):
    data = np.stack([100 * np.exp(-0.8 * b / 1000) + rng.normal(0, 1, shape) for b in (0, 1000, 4000)])
    return Volume(np.abs(data), labels=("b=0", "b=1000", "b=4000"))


def test_denoise_n2n_zero_weights_returns_noisy(rng):
    net = Network((4000,), 4000, "residual", features=6)
    for p in net.parameters():
        p[...] = 0
    dwi = _dwi(rng)
    out = denoise(MethodConfig("N2N", (4000,), 4000, network=net), dwi)
    assert np.array_equal(out.data[0], dwi.data[2]) and out.labels == ("b=4000",)


def test_denoise_rejects_miswired_network():
    net = Network((0, 4000), 4000, "residual", features=6)
    with pytest.raises(ConfigError):
        MethodConfig("N2N", (4000,), 4000).check_network(net)


def test_denoise_alge_and_mppca(rng):
    dwi = _dwi(rng)
    out = denoise(MethodConfig("ALGe", (0, 1000), 4000), dwi)
    assert out.dims == dwi.dims and out.channels == 1
    out = denoise(MethodConfig("MPPCA", (0, 1000, 4000), 4000), dwi)
    assert out.dims == dwi.dims and np.all(np.isfinite(out.data))
    with pytest.raises(ConfigError):
        denoise(MethodConfig("ALGe", (0, 2000), 4000), dwi)


# -- input configuration sweep -----------------------------------------------------


def test_input_combinations():
    assert input_combinations([0, 1000, 4000], 4000) == [(4000.0,), (0.0, 4000.0), (1000.0, 4000.0), (0.0, 1000.0, 4000.0)]
    assert len(input_combinations([0, 1000, 2000, 4000], 4000)) == 8
    with pytest.raises(ValueError):
        input_combinations([0, 1000], 4000)


@pytest.fixture(scope="module")
def sweep_sets():
    rng = np.random.default_rng(7)
    shape = (3, 32, 32, 4)
    clean = 100 * np.exp(-0.8 * np.array([0, 1, 4.0]))[:, None, None, None] * rng.uniform(0.5, 1.5, shape[1:])[None]
    labels = ("b=0", "b=1000", "b=4000")
    a = Volume(clean + rng.normal(0, 2, shape), labels=labels)
    b = Volume(clean + rng.normal(0, 2, shape), labels=labels)
    tr = extract_patches([(a, b)], 16, slices=[0, 1, 2])
    va = slices_dataset([(a, b)], (0, 1000, 4000), 4000, [3])
    return tr, va


def test_sweep_single_repeat_matches_train(sweep_sets):
    tr, va = sweep_sets
    cfg = TrainingConfig(patch_size=16, batch_size=4, max_epochs=2, seed=3)
    res = input_configuration_sweep(tr, va, 4000, cfg, repeats=1)
    assert list(res.curves) == input_combinations([0, 1000, 4000], 4000)
    combo = (1000.0, 4000.0)
    t, v = tr.select_inputs(combo), va.select_inputs(combo)
    net = Network(combo, 4000, seed=3, dtype=np.float32, input_scale=input_scale(t), output_scale=output_scale(t, "residual"))
    single = train(net, t, v, cfg)
    assert np.array_equal(res.curves[combo], single.val_loss)
    assert res.final[combo] == single.best_val_loss
    assert sorted(res.ranking) == sorted(res.curves)


def test_sweep_reuses_precomputed(sweep_sets):
    tr, va = sweep_sets
    cfg = TrainingConfig(patch_size=16, batch_size=4, max_epochs=1)
    first = input_configuration_sweep(tr, va, 4000, cfg, repeats=1)
    again = input_configuration_sweep(tr, va, 4000, cfg, repeats=2, precomputed=first.runs)
    for combo, runs in again.runs.items():
        assert runs[0] is first.runs[combo][0] and len(runs) == 2
    with pytest.raises(ValueError):
        input_configuration_sweep(tr, va, 4000, cfg, repeats=0)
