"""End-to-end experiment: phantom -> simulation -> training -> denoising -> evaluation.

Every random draw is seeded from the configuration, so a rerun with the
same configuration reproduces the metric tables exactly in single-threaded
mode. Stage functions are public so that tests can reuse intermediate
results (e.g. train several seeds on one simulated data set).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mbdenoise.config import ExperimentConfig, dump_config
from mbdenoise.denoisers import MethodConfig, alge_extrapolate, mppca_denoise, nn_denoise
from mbdenoise.eval import metrics as M
from mbdenoise.eval import plotting
from mbdenoise.nn import (
    Network,
    PatchDataset,
    TrainingConfig,
    evaluate_loss,
    extract_patches,
    input_scale,
    load_checkpoint,
    output_scale,
    save_checkpoint,
    slices_dataset,
    train,
)
from mbdenoise.phantom import TISSUES, generate_procedural_phantom, load_phantom, save_phantom
from mbdenoise.simulator import (
    AcquisitionProtocol,
    LesionField,
    LesionParams,
    add_rician_noise,
    default_sigma,
    generate_directions,
    generate_lesion_shapes,
    insert_lesions,
    sample_lesion_params,
    save_lesion_shapes,
    simulate_clean,
)
from mbdenoise.volume import Volume, save_volume

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MBDENOISE_OUTPUT_ROOT"
STAGE_DIRS = ("phantom", "sim", "checkpoints", "denoised", "eval")
FLOAT_FMT = "{:.10g}"
SHOWCASE_INDEX = 999_999  # noise stream of the lesion / no-lesion showcase pair


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "NA" if not np.isfinite(x) else FLOAT_FMT.format(float(x))
    return str(x)


def write_tsv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _crop_z(v: Volume, z0: int, z1: int) -> Volume:
    return Volume(v.data[..., z0:z1], v.voxel_size, v.labels)


@dataclass
class DirectionSim:
    direction: int
    lesions: LesionField
    clean: Volume
    noisy: list


@dataclass
class ExperimentData:
    """Everything simulated before training; shared by all methods and seeds."""

    config: ExperimentConfig
    phantom: object
    protocol: AcquisitionProtocol
    shapes: list
    train_sims: list
    train_slices: dict
    val_slices: dict
    train_set: PatchDataset
    val_set: PatchDataset
    floor_mse: float
    test_lesions: LesionField
    test_slices: list

    @property
    def sigma(self) -> float:
        return self.protocol.sigma

    @property
    def target_bvalue(self) -> float:
        return self.config.training.target_bvalue


def make_phantom(cfg: ExperimentConfig):
    if cfg.phantom.source == "procedural":
        return generate_procedural_phantom(cfg.phantom.dims, seed=cfg.phantom.seed)
    return load_phantom(cfg.phantom.source)


def make_protocol(cfg: ExperimentConfig, phantom) -> AcquisitionProtocol:
    pr = cfg.protocol
    g = generate_directions(pr.n_directions, seed=pr.direction_seed)
    proto = AcquisitionProtocol(pr.bvalues, g, 0.0, repetitions=pr.repetitions)
    return proto.with_sigma(default_sigma(phantom.params, proto, pr.sigma_fraction))


def noise_seed(cfg: ExperimentConfig, direction: int, rep: int) -> int:
    return cfg.protocol.noise_seed + 100 * direction + rep


def simulate_direction(cfg, phantom, proto, shapes, direction, threads=1) -> DirectionSim:
    lesions = insert_lesions(phantom, shapes, cfg.lesions.count_range, seed=cfg.lesions.seed + direction)
    clean = simulate_clean(phantom, lesions, proto, direction)
    noisy = [add_rician_noise(clean, proto.sigma, noise_seed(cfg, direction, r), threads) for r in range(proto.repetitions)]
    return DirectionSim(direction, lesions, clean, noisy)


def split_slices(slices, val_fraction, rng) -> tuple:
    """Random (train, validation) split of z indices; both sorted."""
    zs = np.array(sorted(slices))
    rng.shuffle(zs)
    n_val = max(1, int(round(val_fraction * len(zs))))
    if n_val >= len(zs):
        raise ValueError(f"{len(zs)} slices are too few for a train/validation split")
    return sorted(int(z) for z in zs[n_val:]), sorted(int(z) for z in zs[:n_val])


def evaluation_slice_indices(nz: int, n: int) -> list:
    """``n`` evenly spaced slices across the central fifth of the volume."""
    if n == 1:
        return [nz // 2]
    return [int(round(z)) for z in np.linspace(0.4 * nz, 0.6 * nz, n)]


def build_experiment_data(cfg: ExperimentConfig, threads: int = 1) -> ExperimentData:
    phantom = make_phantom(cfg)
    proto = make_protocol(cfg, phantom)
    le, tr = cfg.lesions, cfg.training
    shapes = generate_lesion_shapes(le.n_shapes, le.size_range, le.elongation_range, seed=le.shape_seed)
    train_shapes = shapes[le.train_shapes[0] : le.train_shapes[1]]
    test_shapes = shapes[le.test_shapes[0] : le.test_shapes[1]]
    bvals, target = proto.bvalues, tr.target_bvalue
    rng = np.random.default_rng(tr.split_seed)
    sims, train_slices, val_slices = [], {}, {}
    train_parts, val_parts = [], []
    for d in cfg.protocol.train_directions:
        sim = simulate_direction(cfg, phantom, proto, train_shapes, d, threads)
        lesion_z = sorted({int(z) for z in np.nonzero(sim.lesions.labels >= 0)[2]})
        tr_z, va_z = split_slices(lesion_z, tr.val_fraction, rng)
        train_slices[d], val_slices[d] = tr_z, va_z
        n0, n1 = sim.noisy[0], sim.noisy[1]
        pairs = [(n0, n1), (n1, n0)] if tr.symmetric_pairs else [(n0, n1)]
        train_parts.append(extract_patches(pairs, tr.patch_size, input_bvalues=bvals, target_bvalue=target, slices=tr_z))
        val_parts.append(slices_dataset([(n0, n1)], bvals, target, va_z))
        sims.append(sim)
    train_set = PatchDataset.concat(train_parts)
    val_set = PatchDataset.concat(val_parts)
    ti = list(val_set.input_bvalues).index(float(target))
    floor = M.theoretical_floor(val_set.inputs[:, ti], val_set.targets[:, 0], "MSE")
    test_z = evaluation_slice_indices(phantom.dims[2], cfg.evaluation.n_test_slices)
    test_lesions = insert_lesions(
        phantom, test_shapes, le.count_range, seed=le.seed + 1000 + cfg.protocol.test_direction, slices=test_z
    )
    if not test_lesions.pure_lesion_mask().any():
        raise ValueError("no pure-lesion voxels in the test slices; enlarge the phantom or the lesion shapes")
    return ExperimentData(cfg, phantom, proto, shapes, sims, train_slices, val_slices, train_set, val_set, floor, test_lesions, test_z)


def training_config(cfg: ExperimentConfig, seed=None) -> TrainingConfig:
    tr = cfg.training
    return TrainingConfig(
        patch_size=tr.patch_size,
        batch_size=tr.batch_size,
        learning_rate=tr.learning_rate,
        max_epochs=tr.max_epochs,
        patience=tr.patience,
        seed=tr.seed if seed is None else seed,
        loss=tr.loss,
    )


def method_config(name: str, inputs, target) -> MethodConfig:
    return MethodConfig(name, tuple(inputs), target)


def train_method(data: ExperimentData, name: str, seed=None, dtype=np.float32):
    """Train one network method; returns its TrainResult (network attached)."""
    cfg = data.config
    spec = cfg.training.methods[name]
    mc = method_config(name, spec.inputs, data.target_bvalue)
    tr = data.train_set.select_inputs(mc.input_bvalues)
    va = data.val_set.select_inputs(mc.input_bvalues)
    tcfg = training_config(cfg, seed)
    net = Network(
        mc.input_bvalues,
        mc.target_bvalue,
        mc.mode,
        seed=tcfg.seed,
        dtype=dtype,
        input_scale=input_scale(tr),
        output_scale=output_scale(tr, mc.mode),
    )
    log.info("training %s on %d patches (%d validation slices)", name, len(tr), len(va))
    return train(net, tr, va, tcfg)


def train_methods(data: ExperimentData, seed=None, methods=None) -> dict:
    names = methods or list(data.config.training.methods)
    return {name: train_method(data, name, seed) for name in names}


@dataclass
class LesionEvaluation:
    methods: tuple
    params: list
    intensities: np.ndarray  # (n_sets, n_bvalues) mean clean lesion intensity
    lesion_mae: dict  # method -> (n_sets,) MAE over pure-lesion voxels
    brain_mae: dict  # method -> (n_sets,) MAE over brain voxels of the test slices
    errors: dict  # method -> pooled signed pure-lesion errors
    error_maps: dict  # method -> mean |error| over paramsets, test slices (nx, ny, nz_test)
    lesion_fraction: np.ndarray
    conspicuity: dict = field(default_factory=dict)
    showcase: dict = field(default_factory=dict)

    def attribution(self) -> M.Attribution:
        return M.best_method_attribution(self.lesion_mae)

    def summaries(self, sigma) -> dict:
        return {m: M.lesion_error_histograms(self.errors[m], scale=sigma) for m in self.methods}


def _denoise_all(data: ExperimentData, nets: dict, noisy: Volume, z_local: list) -> dict:
    """Target-b estimates of every method on the listed slices of a cropped volume."""
    ev = data.config.evaluation
    target = data.target_bvalue
    bvals = [float(b) for b in data.protocol.bvalues]
    out = {}
    sub = Volume(noisy.data[..., z_local], noisy.voxel_size, noisy.labels)
    for name, net in nets.items():
        out[name] = nn_denoise(net, sub).data[0]
    b1, b2 = ev.alge_pair
    s1 = Volume(sub.data[bvals.index(b1)], sub.voxel_size)
    s2 = Volume(sub.data[bvals.index(b2)], sub.voxel_size)
    out["ALGe"] = alge_extrapolate(s1, s2, b1, b2, target).data[0]
    den = mppca_denoise(noisy, ev.mppca_patch_radius)
    out["MPPCA"] = den.data[bvals.index(target)][..., z_local]
    return out


def _eval_window(data: ExperimentData) -> tuple:
    """z-range that holds every MPPCA window touching a test slice."""
    pad = 2 * data.config.evaluation.mppca_patch_radius
    nz = data.phantom.dims[2]
    z0 = max(0, min(data.test_slices) - pad)
    z1 = min(nz, max(data.test_slices) + pad + 1)
    if z1 - z0 < 2 * data.config.evaluation.mppca_patch_radius + 1:
        raise ValueError("volume too thin for the MPPCA window")
    return z0, z1


def paramset_noise_seed(cfg: ExperimentConfig, index: int) -> int:
    return (cfg.evaluation.seed + 1) * 1_000_000 + index


def evaluate_lesions(data: ExperimentData, nets: dict, n_paramsets=None, progress=None) -> LesionEvaluation:
    """Denoise the test slices for random lesion parameter sets and score every method.

    All test lesions share one parameter set per instance; each instance
    gets its own noise. MAE is taken against the noiseless image over
    voxels of 100 % lesion fraction.
    """
    cfg = data.config
    ev = cfg.evaluation
    n = ev.n_paramsets if n_paramsets is None else n_paramsets
    target = data.target_bvalue
    bvals = [float(b) for b in data.protocol.bvalues]
    ti = bvals.index(float(target))
    z0, z1 = _eval_window(data)
    z_local = [z - z0 for z in data.test_slices]
    frac = data.test_lesions.fraction.values[..., data.test_slices]
    pure = frac >= 1.0 - M.PURE_LESION_TOL
    brain = sum(data.phantom.fraction(t) for t in TISSUES)[..., data.test_slices] > 0.5
    methods = tuple(list(nets) + ["MPPCA", "ALGe"])
    lesion_mae = {m: np.zeros(n) for m in methods}
    brain_mae = {m: np.zeros(n) for m in methods}
    errors = {m: [] for m in methods}
    maps = {m: np.zeros(frac.shape) for m in methods}
    intensities = np.zeros((n, len(bvals)))
    params = []
    direction = cfg.protocol.test_direction
    for i in range(n):
        p = sample_lesion_params(np.random.default_rng(np.random.SeedSequence([ev.seed, i])))
        params.append(p)
        clean = _crop_z(simulate_clean(data.phantom, data.test_lesions.with_params(p), data.protocol, direction), z0, z1)
        noisy = add_rician_noise(clean, data.sigma, paramset_noise_seed(cfg, i))
        ref = clean.data[ti][..., z_local]
        intensities[i] = [clean.data[k][..., z_local][pure].mean() for k in range(len(bvals))]
        for m, est in _denoise_all(data, nets, noisy, z_local).items():
            err = est - ref
            lesion_mae[m][i] = np.abs(err[pure]).mean()
            brain_mae[m][i] = np.abs(err[brain]).mean()
            errors[m].append(err[pure])
            maps[m] += np.abs(err)
        if progress:
            progress(i + 1, n)
    result = LesionEvaluation(
        methods,
        params,
        intensities,
        lesion_mae,
        brain_mae,
        {m: np.concatenate(errors[m]) for m in methods},
        {m: maps[m] / n for m in methods},
        frac,
    )
    _conspicuity(data, nets, result, z0, z1, z_local)
    return result


def averaged_noise_seed(cfg: ExperimentConfig, index: int, rep: int) -> int:
    """Noise stream of repetition ``rep`` (< 100) of instance ``index`` for the averaged reference."""
    return (cfg.evaluation.seed + 1) * 10_000_000_000 + 100 * index + rep


def averaged_reference_mae(data: ExperimentData, nets: dict, n_instances: int = 10, nex: int = 15) -> dict:
    """Brain MAE of every method against the mean of ``nex`` noisy repetitions.

    Mirrors a measured-data protocol where no noiseless image exists: each
    method denoises repetition 0 and is scored against the voxelwise average
    of all repetitions, which carries the same Rician noise floor as the
    data. Lesion parameters are drawn as in :func:`evaluate_lesions`.
    Returns method -> mean MAE over instances.
    """
    if not 2 <= nex <= 100:
        raise ValueError("nex must lie in [2, 100]")
    cfg = data.config
    ev = cfg.evaluation
    ti = [float(b) for b in data.protocol.bvalues].index(float(data.target_bvalue))
    z0, z1 = _eval_window(data)
    z_local = [z - z0 for z in data.test_slices]
    brain = sum(data.phantom.fraction(t) for t in TISSUES)[..., data.test_slices] > 0.5
    d = cfg.protocol.test_direction
    maes = {}
    for i in range(n_instances):
        p = sample_lesion_params(np.random.default_rng(np.random.SeedSequence([ev.seed, i])))
        clean = _crop_z(simulate_clean(data.phantom, data.test_lesions.with_params(p), data.protocol, d), z0, z1)
        reps = [add_rician_noise(clean, data.sigma, averaged_noise_seed(cfg, i, k)) for k in range(nex)]
        ref = np.mean([r.data[ti][..., z_local] for r in reps], axis=0)
        for m, est in _denoise_all(data, nets, reps[0], z_local).items():
            maes.setdefault(m, []).append(np.abs(est - ref)[brain].mean())
    return {m: float(np.mean(v)) for m, v in maes.items()}


def _conspicuity(data, nets, result, z0, z1, z_local):
    """Denoise the showcase parameter set with and without lesions (same noise)."""
    cfg = data.config
    sc = cfg.evaluation.showcase
    p = LesionParams(sc["f"], sc["D1"], sc["D2"], sc["dT2"])
    ti = [float(b) for b in data.protocol.bvalues].index(float(data.target_bvalue))
    seed = paramset_noise_seed(cfg, SHOWCASE_INDEX)
    d = cfg.protocol.test_direction
    with_l = _crop_z(simulate_clean(data.phantom, data.test_lesions.with_params(p), data.protocol, d), z0, z1)
    without = _crop_z(simulate_clean(data.phantom, None, data.protocol, d), z0, z1)
    den_w = _denoise_all(data, nets, add_rician_noise(with_l, data.sigma, seed), z_local)
    den_o = _denoise_all(data, nets, add_rician_noise(without, data.sigma, seed), z_local)
    result.conspicuity = {m: den_w[m] - den_o[m] for m in den_w}
    result.conspicuity["clean"] = with_l.data[ti][..., z_local] - without.data[ti][..., z_local]
    result.showcase = {"clean": with_l.data[ti][..., z_local], **den_w}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_reports(out: Path, data: ExperimentData, nets: dict, evaluation: LesionEvaluation, trained: dict = None) -> list:
    """metrics.tsv, histogram and attribution tables, loss curves and PNG figures.

    ``val_mse`` is recomputed from each network on the validation slices,
    so checkpoints loaded without their training history report the same
    value. Loss curves are written when ``trained`` (method -> TrainResult)
    is given.
    """
    trained = trained or {}
    ev_dir = out / "eval"
    sigma = data.sigma
    summaries = evaluation.summaries(sigma)
    att = evaluation.attribution()
    rates = att.win_rates
    files = []
    header = ["method", "val_mse", "floor_mse", "floor_gap", "lesion_mae", "brain_mae", "err_mean", "err_std", "err_abs_mean", "frac_abs_lt1", "win_rate"]
    rows = []
    for m in evaluation.methods:
        val = evaluate_loss(nets[m], data.val_set.select_inputs(nets[m].input_bvalues)) if m in nets else float("nan")
        s = summaries[m]
        rows.append(
            [m, val, data.floor_mse, val - data.floor_mse, float(np.mean(evaluation.lesion_mae[m])), float(np.mean(evaluation.brain_mae[m])),
             s.mean, s.std, s.mean_abs, s.fraction_below_one, rates[m]]
        )
    files.append(write_tsv(ev_dir / "metrics.tsv", header, rows))
    for which, name in (("signed", "hist_mean.tsv"), ("absolute", "hist_abs.tsv")):
        hrows = []
        for m in evaluation.methods:
            h = getattr(summaries[m], which)
            hrows += [[m, float(h.edges[k]), float(h.edges[k + 1]), int(c)] for k, c in enumerate(h.counts)]
        files.append(write_tsv(ev_dir / name, ["method", "bin_lo", "bin_hi", "count"], hrows))
    bnames = [f"b{b:g}" for b in data.protocol.bvalues]
    arows = []
    for i, p in enumerate(evaluation.params):
        arows.append([i, p.f, p.D1, p.D2, p.dT2, *evaluation.intensities[i], *att.maes[i], att.methods[att.winner[i]], int(att.tie[i])])
    files.append(write_tsv(ev_dir / "attribution.tsv", ["set", "f", "D1", "D2", "dT2", *bnames, *[f"mae_{m}" for m in att.methods], "winner", "tie"], arows))
    crows = []
    for m, res in trained.items():
        crows += [[m, e + 1, res.train_loss[e], res.val_loss[e]] for e in range(len(res.val_loss))]
    files.append(write_tsv(ev_dir / "loss_curves.tsv", ["method", "epoch", "train_loss", "val_loss"], crows))
    # figures: middle test slice
    k = len(data.test_slices) // 2
    files.append(plotting.plot_maps({m: evaluation.error_maps[m][..., k] for m in evaluation.methods}, ev_dir / "error_maps.png", "mean |error|", cmap="magma", vmin=0))
    masked = {m: np.where(evaluation.lesion_fraction[..., k] > 0, evaluation.error_maps[m][..., k], 0.0) for m in evaluation.methods}
    files.append(plotting.plot_maps(masked, ev_dir / "error_maps_lesion.png", "mean |error|, lesion voxels", cmap="magma", vmin=0))
    if "MBD" in evaluation.methods:
        diffs = {
            f"MBD vs {m}": evaluation.error_maps[m][..., k] - evaluation.error_maps["MBD"][..., k]
            for m in evaluation.methods
            if m != "MBD"
        }
        files.append(plotting.plot_difference_maps(diffs, ev_dir / "difference_maps.png", "green: MBD lower error"))
    files.append(plotting.plot_histograms(summaries, ev_dir / "hist_mean.png", "signed", xlim=(-4, 4)))
    files.append(plotting.plot_histograms(summaries, ev_dir / "hist_abs.png", "absolute", xlim=(0, 8)))
    if trained:
        files.append(plotting.plot_loss_curves({m: r.val_loss for m, r in trained.items()}, ev_dir / "loss_curves.png", floor=data.floor_mse))
    files.append(plotting.plot_attribution(evaluation.intensities, att.winner_names(), ev_dir / "attribution.png"))
    files.append(plotting.plot_maps({m: v[..., k] for m, v in evaluation.conspicuity.items()}, ev_dir / "conspicuity.png", "with - without lesions", cmap="coolwarm"))
    return files


def _save_stage_outputs(out: Path, data: ExperimentData, nets: dict, evaluation: LesionEvaluation) -> list:
    files = []
    save_phantom(data.phantom, out / "phantom")
    files += sorted((out / "phantom").iterdir())
    sim = out / "sim"
    sim.mkdir(parents=True, exist_ok=True)
    g = data.protocol.directions
    files.append(write_tsv(sim / "directions.tsv", ["index", "gx", "gy", "gz", "role"], [
        [i, *g[i], "test" if i == data.config.protocol.test_direction else ("train" if i in data.config.protocol.train_directions else "unused")]
        for i in range(len(g))
    ]))
    save_lesion_shapes(data.shapes, sim / "shapes")
    for s in data.train_sims:
        save_volume(s.clean, sim / f"train_dir{s.direction}_clean")
        save_volume(s.lesions.fraction, sim / f"train_dir{s.direction}_lesions")
        for r, v in enumerate(s.noisy):
            save_volume(v, sim / f"train_dir{s.direction}_rep{r}")
    save_volume(data.test_lesions.fraction, sim / "test_lesions")
    split_rows = [[d, "train", z] for d, zs in data.train_slices.items() for z in zs]
    split_rows += [[d, "val", z] for d, zs in data.val_slices.items() for z in zs]
    split_rows += [[data.config.protocol.test_direction, "test", z] for z in data.test_slices]
    files.append(write_tsv(sim / "slices.tsv", ["direction", "role", "z"], split_rows))
    files += sorted(p for p in sim.rglob("*") if p.is_file() and p.suffix != ".tsv")
    for m, net in nets.items():
        path = out / "checkpoints" / f"{m}.ckpt"
        save_checkpoint(net, path)
        files.append(path)
    den = out / "denoised"
    for m, arr in evaluation.showcase.items():
        path = den / f"showcase_{m}"
        save_volume(Volume(arr, data.phantom.voxel_size, (f"b={data.target_bvalue:g}",)), path)
        files += [path.with_suffix(".f32raw"), path.with_suffix(".vhdr")]
    return files


def resolve_output_dir(out_dir) -> Path:
    """Relative paths are taken under $MBDENOISE_OUTPUT_ROOT when it is set."""
    p = Path(out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def run_pipeline(cfg: ExperimentConfig, out_dir, threads: int = 1, data: ExperimentData = None, trained: dict = None) -> Path:
    """Run every stage and write the experiment directory.

    Layout: ``phantom/``, ``sim/``, ``checkpoints/``, ``denoised/``,
    ``eval/`` and ``manifest.json`` (config, its hash, seeds, and a SHA-256
    for every output file).
    """
    out = _prepare(cfg, out_dir)
    data = data or build_experiment_data(cfg, threads)
    trained = trained if trained is not None else train_methods(data)
    nets = {m: r.network for m, r in trained.items()}
    return _finish(out, cfg, data, nets, trained, threads)


def load_networks(cfg: ExperimentConfig, checkpoint_dir) -> dict:
    """``<method>.ckpt`` for every network method of the config, checked against it."""
    nets = {}
    for name, spec in cfg.training.methods.items():
        net = load_checkpoint(Path(checkpoint_dir) / f"{name}.ckpt", dtype=np.float32)
        method_config(name, spec.inputs, cfg.training.target_bvalue).check_network(net)
        nets[name] = net
    return nets


def evaluate_checkpoints(cfg: ExperimentConfig, checkpoint_dir, out_dir, threads: int = 1, data: ExperimentData = None) -> Path:
    """Like :func:`run_pipeline` but with networks loaded instead of trained."""
    nets = load_networks(cfg, checkpoint_dir)
    out = _prepare(cfg, out_dir)
    data = data or build_experiment_data(cfg, threads)
    return _finish(out, cfg, data, nets, {}, threads)


def _prepare(cfg, out_dir) -> Path:
    out = resolve_output_dir(out_dir)
    for d in STAGE_DIRS:
        (out / d).mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def _finish(out, cfg, data, nets, trained, threads) -> Path:
    evaluation = evaluate_lesions(data, nets)
    files = _save_stage_outputs(out, data, nets, evaluation)
    files += write_reports(out, data, nets, evaluation, trained)
    files.append(out / "config.yaml")
    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": {
            "phantom": cfg.phantom.seed,
            "directions": cfg.protocol.direction_seed,
            "shapes": cfg.lesions.shape_seed,
            "lesions_train": {d: cfg.lesions.seed + d for d in cfg.protocol.train_directions},
            "lesions_test": cfg.lesions.seed + 1000 + cfg.protocol.test_direction,
            "noise": {f"dir{d}_rep{r}": noise_seed(cfg, d, r) for d in cfg.protocol.train_directions for r in range(cfg.protocol.repetitions)},
            "split": cfg.training.split_seed,
            "training": cfg.training.seed,
            "evaluation": cfg.evaluation.seed,
        },
        "sigma": data.sigma,
        "floor_mse": data.floor_mse,
        "threads": threads,
        "files": {str(p.relative_to(out)): _sha256(p) for p in sorted(set(files))},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
