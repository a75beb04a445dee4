"""Command-line entry point: ``autoclip {classify,simulate,ablate,bench,gradcheck}``.

Exit codes: 0 success, 1 usage or input error, 2 internal error or failed
gradient check. Tables go to ``--out``; stdout carries summary lines only.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .aggregators import aggregate_mean, predict
from .embedding import normalize, pairwise_similarities
from .engine import AutoclipConfig, ObjectiveKind, aggregate_batch, autoclip_classify
from .estimator import METHODS, make_method
from .exceptions import AutoclipError
from .gradcheck import run_gradcheck
from .stepsize import check_beta
from .synthetic import (
    DEFAULT_ENTANGLEMENT,
    DEFAULT_NOISE,
    ControlledConfig,
    GridSpec,
    run_ablation,
    run_grid,
    sample_controlled,
)

# no model logit scale exists for simulated embeddings, so the objective is
# used unscaled there
SIMULATION_TAU = 1.0
DEFAULT_TAU = 100.0
# per-sample overhead on top of image encoding, ViT-L-14 on a V100
REFERENCE_OVERHEAD_MS = {"mean": 0.08, "autoclip_fixed_alpha": 0.45, "autoclip_bisection": 1.54}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_simulation_flags(p):
    p.add_argument("--entanglement", type=_float_list, default=list(DEFAULT_ENTANGLEMENT))
    p.add_argument("--noise", type=_float_list, default=list(DEFAULT_NOISE))
    p.add_argument("--seeds", type=_positive_int, default=100)
    p.add_argument("--classes", type=_positive_int, default=5)
    p.add_argument("--dim", type=_positive_int, default=128)
    p.add_argument("--templates", type=_positive_int, default=10)
    p.add_argument("--instances", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.85)
    p.add_argument("--tau", type=float, default=SIMULATION_TAU)
    p.add_argument("--objective", choices=[k.value for k in ObjectiveKind], default="logsumexp")
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="autoclip", description="Auto-tuned zero-shot classification over embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify the images of a task manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, default="autoclip")
    p.add_argument("--beta", type=float, default=0.85)
    p.add_argument("--tau", type=float, default=None, help="default: manifest temperature, else 100")
    p.add_argument("--objective", choices=[k.value for k in ObjectiveKind], default="logsumexp")
    p.add_argument("--topr", type=int)
    p.add_argument("--fixed-alpha", type=float)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="run the controlled-setting grid")
    _add_simulation_flags(p)
    p.add_argument("--methods", type=_str_list, default=["mean", "max", "autoclip"])
    p.add_argument("--topr", type=int, help="R for the topr method")
    p.add_argument("--export-synthetic", type=Path, metavar="MANIFEST",
                   help="write one instance set (first grid cell, --seed) as AEMB tensors plus manifest")

    p = sub.add_parser("ablate", help="sweep beta or the objective over the grid")
    p.add_argument("--kind", choices=("beta", "objective"), required=True)
    p.add_argument("--values", type=_str_list, required=True)
    p.add_argument("--aggregate", action="store_true", help="average over cells instead of one row per cell")
    _add_simulation_flags(p)

    p = sub.add_parser("bench", help="per-sample aggregation latency")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path)
    src.add_argument("--synthetic", action="store_true")
    p.add_argument("--repeats", type=_positive_int, default=1000)
    p.add_argument("--beta", type=float, default=0.85)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="closed-form gradient vs finite differences")
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _controlled_config(args, entanglement=None, noise=None) -> ControlledConfig:
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return ControlledConfig(
        num_classes=args.classes,
        dim=args.dim,
        num_templates=args.templates,
        num_instances=args.instances,
        entanglement=args.entanglement[0] if entanglement is None else entanglement,
        instance_noise=args.noise[0] if noise is None else noise,
        seed=args.seed,
    )


def _check_axes(args):
    if not args.entanglement or not args.noise:
        raise UsageError("--entanglement and --noise need at least one value")
    bad = [e for e in args.entanglement if not 0 <= e <= 1]
    if bad:
        raise UsageError(f"entanglement values must lie in [0, 1], got {bad}")
    bad = [n for n in args.noise if not n > 0]
    if bad:
        raise UsageError(f"noise values must be positive, got {bad}")


def cmd_classify(args) -> int:
    manifest = formats.load_manifest(args.manifest)
    tau = args.tau if args.tau is not None else (manifest.temperature or DEFAULT_TAU)
    try:
        method = make_method(
            args.method,
            beta=args.beta,
            tau=tau,
            objective=args.objective,
            topr=args.topr,
            fixed_alpha=args.fixed_alpha,
        )
    except AutoclipError as exc:
        raise UsageError(str(exc)) from exc
    agg = aggregate_batch(manifest.descriptors, manifest.images, method)
    pred = np.argmax(agg.scores, axis=1)
    rows = []
    for n in range(len(pred)):
        rows.append(
            formats.ResultsRow(
                sample_index=n,
                predicted_class=manifest.classes[pred[n]],
                true_class=None if manifest.labels is None else manifest.classes[manifest.labels[n]],
                top_score=float(agg.scores[n, pred[n]]),
                weight_entropy_bits=None if agg.entropy_bits is None else float(agg.entropy_bits[n]),
                alpha=None if agg.alpha is None else float(agg.alpha[n]),
            )
        )
    formats.write_results(rows, args.out, args.format)
    if manifest.labels is not None:
        print(f"accuracy={float(np.mean(pred == np.asarray(manifest.labels))):.6f}")
    return 0


def export_synthetic(path: Path, config: ControlledConfig, tau: float) -> None:
    inst = sample_controlled(config)
    path = Path(path)
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    desc_name, img_name = f"{stem}.descriptors.aemb", f"{stem}.images.aemb"
    formats.write_tensor(path.parent / desc_name, inst.descriptors)
    formats.write_tensor(path.parent / img_name, inst.images)
    manifest = formats.TaskManifest(
        classes=[f"class{j}" for j in range(config.num_classes)],
        templates=[f"template{i}" for i in range(config.num_templates)],
        descriptor_file=Path(desc_name),
        image_file=Path(img_name),
        labels=[int(y) for y in inst.labels],
        temperature=tau,
    )
    formats.save_manifest(path, manifest)


def _grid_methods(args):
    methods = []
    for name in args.methods:
        try:
            methods.append(make_method(
                name,
                beta=args.beta,
                tau=args.tau,
                objective=args.objective,
                topr=args.topr if name == "topr" else None,
            ))
        except AutoclipError as exc:
            raise UsageError(str(exc)) from exc
    if not methods:
        raise UsageError("--methods needs at least one method")
    return methods


def cmd_simulate(args) -> int:
    _check_axes(args)
    if args.out is None and args.export_synthetic is None:
        raise UsageError("simulate needs --out and/or --export-synthetic")
    base = _controlled_config(args)
    if args.export_synthetic is not None:
        export_synthetic(args.export_synthetic, base, args.tau)
    if args.out is None:
        return 0
    spec = GridSpec(args.entanglement, args.noise, args.seeds, tuple(_grid_methods(args)))
    grid = run_grid(spec, base)
    formats.write_table(grid.rows(), args.out, ("entanglement", "noise", "method", "mean_accuracy", "stderr"))
    mean = grid.mean_accuracy().mean(axis=0)
    print(" ".join(f"{name}={mean[m]:.6f}" for m, name in enumerate(grid.method_names)))
    return 0


def cmd_ablate(args) -> int:
    _check_axes(args)
    if args.out is None:
        raise UsageError("ablate needs --out")
    if args.kind == "beta":
        try:
            values = [check_beta(float(v)) for v in args.values]
        except (ValueError, AutoclipError) as exc:
            raise UsageError(f"beta values must lie in (0, 1]: {exc}") from exc
    else:
        allowed = {k.value for k in ObjectiveKind}
        bad = [v for v in args.values if v not in allowed]
        if bad:
            raise UsageError(f"unknown objectives {bad}; expected {sorted(allowed)}")
        values = list(args.values)
    autoclip = AutoclipConfig(beta=check_beta(args.beta), tau=args.tau, objective=args.objective)
    spec = GridSpec(args.entanglement, args.noise, args.seeds)
    rows = run_ablation(args.kind, values, _controlled_config(args), spec, autoclip, aggregate=args.aggregate)
    cols = ("value", "mean_accuracy", "stderr") if args.aggregate else (
        "value", "entanglement", "noise", "mean_accuracy", "stderr")
    formats.write_table(rows, args.out, cols)
    print(f"rows={len(rows)}")
    return 0


def _timed(fn, *a):
    t0 = time.perf_counter()
    out = fn(*a)
    return (time.perf_counter() - t0) * 1e3, out


def run_bench(desc, imgs, repeats: int, config: AutoclipConfig) -> dict:
    """Time mean, fixed-step and bisection classification per sample.

    The fixed-step run reuses the step size bisection found for the same
    sample, so both AutoCLIP modes produce the same weights. Modes are
    interleaved within each repeat to share machine conditions.
    """
    desc = normalize(desc)
    imgs = normalize(np.asarray(imgs, dtype=np.float64))
    times = {k: [] for k in REFERENCE_OVERHEAD_MS}
    iterations = []

    def mean_path(x):
        return predict(aggregate_mean(pairwise_similarities(desc, x)))

    for r in range(repeats):
        x = imgs[r % len(imgs)]
        t, _ = _timed(mean_path, x)
        times["mean"].append(t)
        t, res = _timed(autoclip_classify, desc, x, config)
        times["autoclip_bisection"].append(t)
        iterations.append(res.step.iterations)
        fixed = replace(config, fixed_alpha=res.step.alpha)
        t, _ = _timed(autoclip_classify, desc, x, fixed)
        times["autoclip_fixed_alpha"].append(t)

    K, C, d = desc.shape
    return {
        "templates": K,
        "classes": C,
        "dim": d,
        "samples": len(imgs),
        "repeats": repeats,
        "latency_ms": {
            k: {"median": float(np.median(v)), "p95": float(np.percentile(v, 95))} for k, v in times.items()
        },
        "mean_bisection_iterations": float(np.mean(iterations)),
        "max_bisection_iterations": int(np.max(iterations)),
        "bisection": {"maxiter": config.bisection.maxiter, "xtol": config.bisection.xtol, "rtol": config.bisection.rtol},
        "reference_overhead_ms_vitl14_v100": REFERENCE_OVERHEAD_MS,
    }


def cmd_bench(args) -> int:
    if args.manifest is not None:
        manifest = formats.load_manifest(args.manifest)
        desc, imgs = manifest.descriptors, manifest.images
        tau = args.tau if args.tau is not None else (manifest.temperature or DEFAULT_TAU)
    else:
        inst = sample_controlled(ControlledConfig(entanglement=0.6, instance_noise=0.5, seed=args.seed))
        desc, imgs = inst.descriptors, inst.images
        tau = args.tau if args.tau is not None else SIMULATION_TAU
    try:
        config = AutoclipConfig(beta=args.beta, tau=tau)
    except AutoclipError as exc:
        raise UsageError(str(exc)) from exc
    report = run_bench(desc, imgs, args.repeats, config)
    formats._atomic_write(args.out, (json.dumps(report, indent=2) + "\n").encode())
    lat = report["latency_ms"]
    print(" ".join(f"{k}_median_ms={v['median']:.4f}" for k, v in lat.items()))
    return 0


def cmd_gradcheck(args) -> int:
    if not args.tolerance > 0:
        raise UsageError("--tolerance must be positive")
    report = run_gradcheck(args.trials, args.seed, args.tolerance)
    print(f"max_deviation={report['max_deviation']:.6e} trials={args.trials} tolerance={args.tolerance:g}")
    if report["failures"]:
        t = report["failures"][0]
        print(
            f"FAIL {len(report['failures'])} of {args.trials} trials; first offending instance: "
            f"seed={args.seed} trial={t} deviation={report['deviations'][t]:.6e}"
        )
        return 2
    return 0


COMMANDS = {
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"autoclip {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except AutoclipError as exc:
        print(f"autoclip {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
