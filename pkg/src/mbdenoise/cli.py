"""Command-line driver.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure
(diverged training, non-finite data). Relative output paths are placed
under ``$MBDENOISE_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from mbdenoise import pipeline
from mbdenoise.config import ConfigValidationError, ExperimentConfig, load_config
from mbdenoise.denoisers import MethodConfig, denoise, input_combinations, input_configuration_sweep
from mbdenoise.eval import plotting
from mbdenoise.nn import (
    ConfigError,
    Network,
    PatchDataset,
    TrainingConfig,
    TrainingDivergedError,
    extract_patches,
    input_scale,
    output_scale,
    save_checkpoint,
    slices_dataset,
    train,
)
from mbdenoise.phantom import PhantomError, generate_procedural_phantom, load_phantom, save_phantom
from mbdenoise.simulator import (
    AcquisitionProtocol,
    add_rician_noise,
    default_sigma,
    generate_directions,
    generate_lesion_shapes,
    insert_lesions,
    load_lesion_field,
    load_lesion_shapes,
    save_lesion_field,
    save_lesion_shapes,
    simulate_clean,
)
from mbdenoise.volume import VolumeFormatError, load_volume, save_volume

log = logging.getLogger("mbdenoise")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def parse_bvalue(token: str) -> float:
    """``"b1000"``, ``"1000"`` -> 1000.0"""
    t = token.strip().lower()
    t = t[1:] if t.startswith("b") else t
    try:
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a b-value: {token!r}") from None


def parse_bvalues(text: str) -> tuple:
    return tuple(parse_bvalue(t) for t in text.split(",") if t.strip())


def parse_ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _out(path) -> Path:
    return pipeline.resolve_output_dir(path)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
    return cfg


def cmd_phantom_gen(args):
    ph = generate_procedural_phantom(tuple(args.dims), seed=args.seed or 0)
    save_phantom(ph, _out(args.out))
    print(f"phantom {ph.dims} -> {_out(args.out)}")


def cmd_lesions(args):
    ph = load_phantom(args.phantom)
    if args.shapes:
        shapes = load_lesion_shapes(args.shapes)
    else:
        shapes = generate_lesion_shapes(args.n_shapes, tuple(args.size_range), seed=args.shape_seed)
    out = _out(args.out)
    slices = list(parse_ints(args.slices)) if args.slices else None
    field = insert_lesions(ph, shapes, tuple(args.count_range), seed=args.seed or 0, slices=slices)
    save_lesion_field(field, out)
    save_lesion_shapes(shapes, out / "shapes")
    print(f"{field.count} lesions, {int(field.pure_lesion_mask().sum())} pure-lesion voxels -> {out}")


def _protocol(args, phantom):
    g = generate_directions(args.n_directions, seed=args.direction_seed)
    proto = AcquisitionProtocol(parse_bvalues(args.bvalues), g, 0.0, repetitions=args.repetitions)
    sigma = args.sigma if args.sigma is not None else default_sigma(phantom.params, proto, args.sigma_frac)
    return proto.with_sigma(sigma)


def cmd_simulate(args):
    ph = load_phantom(args.phantom)
    proto = _protocol(args, ph)
    field = load_lesion_field(args.lesions) if args.lesions else None
    out = _out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dirs = parse_ints(args.directions) if args.directions else tuple(range(args.n_directions))
    base = args.seed or 0
    for d in dirs:
        clean = simulate_clean(ph, field, proto, d)
        save_volume(clean, out / f"dir{d}_clean")
        for r in range(proto.repetitions):
            noisy = add_rician_noise(clean, proto.sigma, base + 100 * d + r, threads=args.threads)
            save_volume(noisy, out / f"dir{d}_rep{r}")
    np.savetxt(out / "directions.tsv", proto.directions, delimiter="\t", header="gx\tgy\tgz", comments="")
    print(f"sigma {proto.sigma:.6g}; {len(dirs)} direction(s) x {proto.repetitions} repetitions -> {out}")


def _training_sets(data_dir, directions, inputs, target, patch_size, val_fraction, split_seed):
    d = Path(data_dir)
    rng = np.random.default_rng(split_seed)
    train_parts, val_parts = [], []
    for k in directions:
        r0, r1 = load_volume(d / f"dir{k}_rep0"), load_volume(d / f"dir{k}_rep1")
        tr_z, va_z = pipeline.split_slices(range(r0.dims[2]), val_fraction, rng)
        train_parts.append(extract_patches([(r0, r1), (r1, r0)], patch_size, input_bvalues=inputs, target_bvalue=target, slices=tr_z))
        val_parts.append(slices_dataset([(r0, r1)], inputs, target, va_z))
    return PatchDataset.concat(train_parts), PatchDataset.concat(val_parts)


def cmd_train(args):
    inputs, target = parse_bvalues(args.inputs), parse_bvalue(args.target)
    mc = MethodConfig(args.method, inputs, target)
    tcfg = TrainingConfig(patch_size=args.patch_size, max_epochs=args.epochs, patience=args.patience, seed=args.seed or 0, learning_rate=args.lr)
    tr, va = _training_sets(args.data, parse_ints(args.directions), inputs, target, args.patch_size, args.val_fraction, args.seed or 0)
    net = Network(inputs, target, mc.mode, seed=tcfg.seed, dtype=np.float32, input_scale=input_scale(tr), output_scale=output_scale(tr, mc.mode))
    res = train(net, tr, va, tcfg)
    out = _out(args.out)
    save_checkpoint(res.network, out)
    pipeline.write_tsv(out.with_suffix(".loss.tsv"), ["epoch", "train_loss", "val_loss"], [[e + 1, a, b] for e, (a, b) in enumerate(zip(res.train_loss, res.val_loss))])
    print(f"{args.method}: best validation loss {res.best_val_loss:.6g} at epoch {res.best_epoch} -> {out}")


def cmd_denoise(args):
    inputs, target = parse_bvalues(args.inputs), parse_bvalue(args.target)
    if args.method == "ALGe" and len(inputs) != 2:
        raise ConfigError("ALGe takes --inputs b1,b2")
    mc = MethodConfig(args.method, inputs, target, checkpoint=args.checkpoint, patch_radius=args.patch_radius)
    out = denoise(mc, load_volume(args.input))
    save_volume(out, _out(args.out))
    print(f"{args.method} -> {_out(args.out)}")


def cmd_run(args):
    cfg = _config(args)
    out = pipeline.run_pipeline(cfg, args.out, threads=args.threads)
    print((out / "eval" / "metrics.tsv").read_text(), end="")
    print(f"experiment -> {out}")


def cmd_evaluate(args):
    cfg = _config(args)
    out = pipeline.evaluate_checkpoints(cfg, args.checkpoints, args.out, threads=args.threads)
    print((out / "eval" / "metrics.tsv").read_text(), end="")
    print(f"reports -> {out / 'eval'}")


def cmd_sweep(args):
    cfg = _config(args)
    data = pipeline.build_experiment_data(cfg, threads=args.threads)
    bvals = data.protocol.bvalues
    target = max(bvals) if args.target_b == "max" else parse_bvalue(args.target_b)
    tcfg = pipeline.training_config(cfg)
    result = input_configuration_sweep(data.train_set, data.val_set, target, tcfg, repeats=args.repeats)
    out = _out(args.out)
    name = lambda combo: "+".join(f"b{b:g}" for b in combo)
    rows = [[rank + 1, name(c), result.final[c], len(result.curves[c])] for rank, c in enumerate(result.ranking)]
    pipeline.write_tsv(out / "sweep.tsv", ["rank", "inputs", "final_val_loss", "epochs"], rows)
    crows = [[name(c), e + 1, v] for c in input_combinations(bvals, target) for e, v in enumerate(result.curves[c])]
    pipeline.write_tsv(out / "sweep_curves.tsv", ["inputs", "epoch", "mean_val_loss"], crows)
    plotting.plot_loss_curves({name(c): v for c, v in result.curves.items()}, out / "sweep_curves.png", floor=data.floor_mse)
    print((out / "sweep.tsv").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: from config, else 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; 1 is bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mbdenoise", description="Multi-b-value DWI denoising experiments on a synthetic brain phantom.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom-gen", parents=[common], help="write a procedural fuzzy-tissue phantom")
    s.add_argument("--out", required=True)
    s.add_argument("--dims", type=int, nargs=3, default=(48, 48, 48))
    s.set_defaults(func=cmd_phantom_gen)

    s = sub.add_parser("lesions", parents=[common], help="insert fuzzy lesions into the phantom white matter")
    s.add_argument("--phantom", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--shapes", help="directory of lesion_*.vhdr masks (default: procedural)")
    s.add_argument("--n-shapes", type=int, default=16)
    s.add_argument("--shape-seed", type=int, default=0)
    s.add_argument("--size-range", type=int, nargs=2, default=(4, 9))
    s.add_argument("--count-range", type=int, nargs=2, default=(4, 10))
    s.add_argument("--slices", help="comma-separated z indices (default: every slice with WM)")
    s.set_defaults(func=cmd_lesions)

    s = sub.add_parser("simulate", parents=[common], help="clean and Rician-noisy DWI per direction and repetition")
    s.add_argument("--phantom", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lesions", help="lesion field directory written by 'lesions'")
    s.add_argument("--bvalues", default="0,1000,4000")
    s.add_argument("--n-directions", type=int, default=3)
    s.add_argument("--direction-seed", type=int, default=0)
    s.add_argument("--directions", help="comma-separated direction indices to simulate (default: all)")
    s.add_argument("--repetitions", type=int, default=2)
    s.add_argument("--sigma-frac", type=float, default=0.07, help="noise std as a fraction of clean WM b=0 intensity")
    s.add_argument("--sigma", type=float, help="absolute noise std (overrides --sigma-frac)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train MBD, N2N or CNNe on simulated repetition pairs")
    s.add_argument("--method", required=True, choices=("MBD", "N2N", "CNNe"))
    s.add_argument("--inputs", required=True, help="e.g. b0,b1000,b4000")
    s.add_argument("--target", required=True, help="e.g. b4000")
    s.add_argument("--data", required=True, help="directory written by 'simulate'")
    s.add_argument("--directions", default="0", help="comma-separated training directions")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--patch-size", type=int, default=16)
    s.add_argument("--epochs", type=int, default=60)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--val-fraction", type=float, default=1.0 / 3.0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", parents=[common], help="apply one method to a multi-b-value volume")
    s.add_argument("--method", required=True, choices=("MBD", "N2N", "CNNe", "MPPCA", "ALGe"))
    s.add_argument("--inputs", required=True, help="input b-values; for ALGe the pair b1,b2")
    s.add_argument("--target", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--patch-radius", type=int, default=2)
    s.add_argument("--in", dest="input", required=True, help="volume with b=<value> channel labels")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("run", parents=[common], help="full pipeline from a YAML config")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", parents=[common], help="lesion evaluation of trained checkpoints; writes TSV tables and PNG figures")
    s.add_argument("--config")
    s.add_argument("--checkpoints", required=True, help="directory with <method>.ckpt files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="compare the four input combinations for one target")
    s.add_argument("--config")
    s.add_argument("--target-b", default="max", help="'max' or a b-value")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigValidationError, ConfigError, PhantomError, VolumeFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
