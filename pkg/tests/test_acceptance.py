"""End-to-end acceptance checks, one test per criterion.

The trained-network fixtures are session scoped: the three seeds trained
for the method ordering are reused by the ALGe comparison, the input sweep
(all-inputs and target-only combinations) and the lesion evaluation. The
whole module takes roughly 45 minutes on one core.
"""

import mpmath
import numpy as np
import pytest

from mbdenoise.config import ExperimentConfig, config_from_dict
from mbdenoise.denoisers import alge_extrapolate, denoise_windows, input_configuration_sweep, mppca_denoise
from mbdenoise.nn import Network, PatchDataset, TrainingConfig, input_scale, output_scale, train
from mbdenoise.nn.gradcheck import GRADCHECK_KINDS, gradient_trials
from mbdenoise.phantom import TISSUES, TissueParams
from mbdenoise.pipeline import averaged_reference_mae, build_experiment_data, evaluate_lesions, run_pipeline, train_method, training_config
from mbdenoise.simulator import AcquisitionProtocol, add_rician_noise, directional_diffusivity, steady_state_factor
from mbdenoise.volume import Volume

SEEDS = (0, 1, 2)
NETS = ("MBD", "N2N", "CNNe")


@pytest.fixture(scope="session")
def data():
    return build_experiment_data(ExperimentConfig())


@pytest.fixture(scope="session")
def seed_runs(data):
    """seed -> method -> TrainResult at the desk-scale defaults."""
    return {s: {m: train_method(data, m, seed=s) for m in NETS} for s in SEEDS}


@pytest.fixture(scope="session")
def nets(seed_runs):
    return {m: r.network for m, r in seed_runs[0].items()}


@pytest.fixture(scope="session")
def lesion_eval(data, nets):
    return evaluate_lesions(data, nets, n_paramsets=200)


def _fmt(d):
    return " ".join(f"{k}={v:.4g}" for k, v in d.items())


# -- 1 ---------------------------------------------------------------------------


def test_criterion_01_simulation(record_property):
    proto = AcquisitionProtocol((0.0, 1000.0, 4000.0), np.eye(3), 0.0)
    params = TissueParams()
    mpmath.mp.dps = 50
    worst_ss = 0.0
    for t in TISSUES:
        p = params[t]
        ref = proto.k * mpmath.mpf(str(p.rho)) * mpmath.exp(-mpmath.mpf(proto.TE) / mpmath.mpf(str(p.T2))) * (
            1 - mpmath.exp(-mpmath.mpf(proto.TR) / mpmath.mpf(str(p.T1)))
        )
        got = steady_state_factor(t, params, proto)
        worst_ss = max(worst_ss, float(abs((got - ref) / ref)))
    rng = np.random.default_rng(2024)
    worst_d = 0.0
    for _ in range(1000):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        lam = rng.uniform(0.05, 3.0, 3)
        tensor = q @ np.diag(lam) @ q.T
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        w, v = np.linalg.eigh(tensor)
        worst_d = max(worst_d, abs(directional_diffusivity(tensor, g) - float(np.sum(w * (g @ v) ** 2))))
    record_property("detail", f"steady-state rel err {worst_ss:.1e}, diffusivity abs err {worst_d:.1e}")
    assert worst_ss < 1e-10
    assert worst_d < 1e-12


# -- 2 ---------------------------------------------------------------------------


def test_criterion_02_rician(record_property):
    sigma = 5.0
    air = add_rician_noise(Volume(np.zeros((100, 100, 100))), sigma, seed=11)
    mean_ratio = air.data.mean() / (sigma * np.sqrt(np.pi / 2))
    bright = add_rician_noise(Volume(np.full((100, 100, 100), 20 * sigma)), sigma, seed=12)
    std_ratio = bright.data.std() / sigma
    record_property("detail", f"S=0 mean/(sigma*sqrt(pi/2))={mean_ratio:.4f}, S=20sigma std/sigma={std_ratio:.4f}")
    assert abs(mean_ratio - 1) < 0.01
    assert abs(std_ratio - 1) < 0.02


# -- 3 ---------------------------------------------------------------------------


def test_criterion_03_gradients(record_property):
    worst = {k: float(gradient_trials(k, trials=100, seed=1).max()) for k in GRADCHECK_KINDS}
    record_property("detail", "max rel err " + _fmt(worst))
    assert all(v < 1e-4 for v in worst.values())


# -- 4 ---------------------------------------------------------------------------


def test_criterion_04_n2n_floor(record_property):
    rng = np.random.default_rng(4)
    sigma, size = 10.0, 32

    def pairs(n):
        c = np.full((n, 1, 1, 1), 100.0)
        return PatchDataset(c + rng.normal(0, sigma, (n, 1, size, size)), c + rng.normal(0, sigma, (n, 1, size, size)), (1.0,), 1.0)

    tr, va = pairs(256), pairs(64)
    net = Network((1.0,), 1.0, "residual", seed=0, dtype=np.float32, input_scale=input_scale(tr), output_scale=output_scale(tr, "residual"))
    res = train(net, tr, va, TrainingConfig(patch_size=size, batch_size=16, max_epochs=40, patience=10))
    ratio = res.best_val_loss / sigma**2
    record_property("detail", f"val MSE / sigma^2 = {ratio:.4f} (initial {res.initial_val_loss / sigma**2:.2f}, best epoch {res.best_epoch})")
    assert abs(ratio - 1) <= 0.05


# -- 5 ---------------------------------------------------------------------------


def test_criterion_05_alge(data, nets, record_property):
    rng = np.random.default_rng(5)
    s0 = rng.uniform(20, 700, (24, 24, 8))
    d = rng.uniform(0.1, 3.0, (24, 24, 8))
    worst = 0.0
    for b1, b2, bt in [(0, 1000, 4000), (0, 1000, 2000), (1000, 4000, 0), (500, 3000, 1500), (2000, 0, 4000)]:
        s1 = Volume(s0 * np.exp(-d * b1 / 1000))
        s2 = Volume(s0 * np.exp(-d * b2 / 1000))
        out = alge_extrapolate(s1, s2, b1, b2, bt)
        worst = max(worst, float(np.max(np.abs(out.data[0] - s0 * np.exp(-d * bt / 1000)))))
    mae = averaged_reference_mae(data, nets, n_instances=10, nex=15)
    record_property("detail", f"noiseless max err {worst:.1e}; MAE vs NEX=15 mean: " + _fmt(mae))
    assert worst <= 1e-9
    for m in NETS:
        assert mae["ALGe"] > mae[m]


# -- 6 ---------------------------------------------------------------------------


def test_criterion_06_method_ordering(data, seed_runs, record_property):
    lines, ok = [], True
    for s, runs in seed_runs.items():
        val = {m: runs[m].best_val_loss for m in NETS}
        gap = {m: v - data.floor_mse for m, v in val.items()}
        ok &= val["MBD"] <= val["N2N"] and val["MBD"] <= val["CNNe"] and min(gap, key=gap.get) == "MBD"
        lines.append(f"seed {s}: " + _fmt(val))
    record_property("detail", f"floor {data.floor_mse:.4g}; " + "; ".join(lines))
    assert ok


# -- 7 ---------------------------------------------------------------------------


def test_criterion_07_input_sweep(data, seed_runs, record_property):
    all_inputs = tuple(float(b) for b in data.protocol.bvalues)
    target = max(all_inputs)
    reuse = {
        all_inputs: [seed_runs[s]["MBD"] for s in SEEDS],
        (target,): [seed_runs[s]["N2N"] for s in SEEDS],
    }
    res = input_configuration_sweep(data.train_set, data.val_set, target, training_config(data.config, seed=0), repeats=3, precomputed=reuse)
    final = {"+".join(f"b{b:g}" for b in k): v for k, v in res.final.items()}
    record_property("detail", "mean final val loss " + _fmt(final))
    assert res.ranking[0] == all_inputs


# -- 8 ---------------------------------------------------------------------------


def test_criterion_08_lesion_protocol(data, lesion_eval, record_property):
    summ = lesion_eval.summaries(data.sigma)
    frac = {m: s.fraction_below_one for m, s in summ.items()}
    rates = lesion_eval.attribution().win_rates
    record_property("detail", f"{len(lesion_eval.params)} sets; frac|e|<1: " + _fmt(frac) + "; win rate: " + _fmt(rates))
    assert len(lesion_eval.params) >= 200
    assert frac["MBD"] > frac["N2N"] and frac["MBD"] > frac["MPPCA"]
    assert all(rates["MBD"] > v for m, v in rates.items() if m != "MBD")


# -- 9 ---------------------------------------------------------------------------


def _low_rank(rng, rank, n=6, shape=(10, 10, 10)):
    patterns = rng.uniform(50, 150, (rank,) + shape)
    weights = rng.uniform(0.2, 1.0, (n, rank))
    return np.tensordot(weights, patterns, axes=1)


def test_criterion_09_mppca(record_property):
    rng = np.random.default_rng(9)
    reductions = []
    for _ in range(10):
        x = rng.normal(0, rng.uniform(0.5, 50), (100, 125, 6))
        out = denoise_windows(x)
        reductions.append(1 - np.var(out) / np.var(x))
    for _ in range(3):
        v = rng.normal(0, 3.0, (3, 12, 12, 12))
        reductions.append(1 - np.var(mppca_denoise(Volume(v)).data) / np.var(v))
    passthrough = 0.0
    for rank in (1, 2):
        for _ in range(3):
            clean = _low_rank(rng, rank)
            passthrough = max(passthrough, float(np.max(np.abs(mppca_denoise(Volume(clean)).data - clean))))
    gains = []
    for _ in range(5):
        clean = _low_rank(rng, 1, shape=(12, 12, 12))
        noisy = clean + rng.normal(0, clean.mean() / 10, clean.shape)
        den = mppca_denoise(Volume(noisy)).data
        gains.append(np.mean((noisy - clean) ** 2) / np.mean((den - clean) ** 2))
    record_property(
        "detail",
        f"min noise variance reduction {min(reductions):.3f}; low-rank max err {passthrough:.1e}; SNR10 MSE ratio min {min(gains):.2f}",
    )
    assert min(reductions) >= 0.70
    assert passthrough <= 1e-8
    assert min(gains) > 1.0


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path, record_property):
    cfg = config_from_dict(
        {
            "phantom": {"dims": [32, 32, 32]},
            "lesions": {"count_range": [1, 3]},
            "training": {"max_epochs": 2, "patience": 2},
            "evaluation": {"n_paramsets": 4, "n_test_slices": 1},
        }
    )
    a = run_pipeline(cfg, tmp_path / "a", threads=1)
    b = run_pipeline(cfg, tmp_path / "b", threads=1)
    tables = ["metrics.tsv", "hist_mean.tsv", "hist_abs.tsv", "attribution.tsv", "loss_curves.tsv"]
    same = {t: (a / "eval" / t).read_bytes() == (b / "eval" / t).read_bytes() for t in tables}
    record_property("detail", "byte-identical: " + " ".join(f"{t}={v}" for t, v in same.items()))
    assert same["metrics.tsv"]
    assert all(same.values())
