"""Command-line interface: ``neurstt synth | detect | eval | check``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from neurstt import checks, io, metrics, solver, synth

log = logging.getLogger("neurstt")

MANIFEST_FORMAT = "neurstt-manifest/1"
METRICS_HEADER = (
    "sequence", "iou", "precision", "recall", "f1", "auc_roc", "auc_tau_fpr", "auc_tau_tpr",
    "auc_bs", "auc_td", "auc_tdbs", "auc_odp", "auc_snpr",
)

# CLI flag -> SolverConfig field, with the parser used for config-file values
SOLVER_FLAGS = {
    "lambda": ("lam", float),
    "phi": ("phi", float),
    "kappa": ("kappa", float),
    "iters": ("iters", int),
    "rank_div": ("rank_div", float),
    "lr": ("lr", float),
    "weight_decay": ("weight_decay", float),
    "depth": ("depth", int),
    "init_scale": ("init_scale", float),
    "omega": ("omega", float),
    "core_range": ("core_range", float),
    "grid": ("grid", str),
    "activation": ("activation", str),
    "tv": ("tv", str),
    "target_mode": ("target_mode", str),
    "background_loss": ("background_loss", str),
    "detach_target": ("detach_target", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "conv_window": ("conv_window", int),
    "conv_tol": ("conv_tol", float),
    "k_sigma": ("k_sigma", float),
    "seed": ("seed", int),
}
TV_ALIASES = {"discrete": "discrete3d", "neural": "neural3d", "neurtv": "neural_spatial"}


class UsageError(Exception):
    pass


def _resolve_threads(value):
    if value is not None:
        return value
    env = os.environ.get("NEURSTT_THREADS")
    return int(env) if env else None


def _write_manifest(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- synth -----------------------------------------------------------------------


def cmd_synth(args):
    cfg = synth.SynthConfig(
        height=args.height, width=args.width, frames=args.frames, bg_rank=args.bg_rank,
        target_size=args.target_size, amplitude=args.amplitude,
        start=tuple(args.start) if args.start else None,
        velocity=tuple(args.velocity) if args.velocity else None,
        drift=args.drift, noise_snr_db=args.noise_snr_db, cross_lines=args.cross_lines,
        vertical_lines=args.vertical_lines, seed=args.seed,
    )
    try:
        d, gt = synth.generate(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.output)
    maxval = 255 if args.bit_depth == 8 else 65535
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    names = [f"{k:04d}.pgm" for k in range(cfg.frames)]
    for k, name in enumerate(names):
        io.write_pgm(out / "frames" / name, io.quantize(d[:, :, k], maxval), maxval)
    io.save_masks(out / "masks", gt, names)
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["noise_snr_db"] = None if math.isinf(cfg.noise_snr_db) else cfg.noise_snr_db
    _write_manifest(out / "manifest.json", {
        "format": MANIFEST_FORMAT, "kind": "synth", "config": cfg_dict, "bit_depth": args.bit_depth,
    })
    print(f"wrote {len(names)} frames and masks to {out}")
    return 0


# -- detect ----------------------------------------------------------------------


def resolve_solver_config(args) -> solver.SolverConfig:
    """Flags > config file > manifest > defaults."""
    values = {}
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        fields = {f.name for f in dataclasses.fields(solver.SolverConfig)}
        values.update({k: v for k, v in manifest.get("config", {}).items() if k in fields})
    if args.config:
        for key, raw in io.read_config(args.config).items():
            if key not in SOLVER_FLAGS:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            name, parse = SOLVER_FLAGS[key]
            values[name] = parse(raw)
    for flag, (name, _) in SOLVER_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if "tv" in values:
        values["tv"] = TV_ALIASES.get(values["tv"], values["tv"])
    try:
        return solver.SolverConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_detect(args):
    manifest = json.loads(Path(args.manifest).read_text()) if args.manifest else {}
    input_dir = args.input or manifest.get("input")
    output_dir = args.output or manifest.get("output")
    if not input_dir or not output_dir:
        raise UsageError("detect needs --input and --output (or a manifest providing them)")
    cfg = resolve_solver_config(args)
    threads = _resolve_threads(args.threads)
    try:
        d, names = io.load_sequence(input_dir)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from None
    if d.shape[2] < 2:
        raise UsageError(f"need at least 2 frames, found {d.shape[2]} in {input_dir}")

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []
    try:
        log.info("running %d iterations on %s", cfg.iters, d.shape)
        result = solver.run(d, cfg, threads=threads)
        io.save_masks(out / "masks", result.masks, names)
        created += [out / "masks" / n for n in names]
        for name, tensor in (("target.nstt", result.target), ("background.nstt", result.background)):
            io.write_tensor(out / name, tensor)
            created.append(out / name)
        rows = [(k + 1, *row) for k, row in enumerate(result.loss_history.tolist())]
        io.write_csv(out / "loss.csv", ("iteration",) + solver.LOSS_COLUMNS, rows)
        created.append(out / "loss.csv")
    except solver.SolverDivergence as exc:
        for p in created:
            p.unlink(missing_ok=True)
        print(f"error: optimization diverged at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return 3

    final = dict(zip(solver.LOSS_COLUMNS, result.loss_history[-1].tolist()))
    _write_manifest(out / "manifest.json", {
        "format": MANIFEST_FORMAT, "kind": "detect", "config": cfg.to_dict(),
        "input": str(input_dir), "output": str(output_dir), "seed": cfg.seed,
        "threads": threads, "iterations": result.iterations,
        "wall_time": result.wall_time, "final_loss": final,
    })
    print(f"{result.iterations} iterations in {result.wall_time:.1f}s, final loss {final['total']:.6g}; "
          f"{int(result.masks.sum())} target pixels flagged")
    return 0


# -- eval ------------------------------------------------------------------------


def _is_sequence_dir(path: Path) -> bool:
    return (path / "masks").is_dir() or bool(io.list_frames(path))


def _load_prediction(path: Path):
    """Return (names, masks, scores) for a detect output dir or a frame dir."""
    frame_dir = path / "masks" if (path / "masks").is_dir() else path
    values, names = io.load_sequence(frame_dir)
    binary = np.all((values == 0) | (values == 1))
    masks = values.astype(np.uint8) if binary else (values >= 0.5).astype(np.uint8)
    scores = values
    target = path / "target.nstt"
    if frame_dir != path and target.is_file():
        scores = np.clip(io.read_tensor(target), 0.0, 1.0)
    return names, masks, scores


def evaluate_sequence(pred_dir, gt_dir, n_tau):
    names, masks, scores = _load_prediction(Path(pred_dir))
    gt_values, gt_names = io.load_sequence(gt_dir)
    for a, b in zip(names, gt_names):
        if a != b:
            raise UsageError(f"prediction {a!r} has no matching ground truth (found {b!r})")
    if len(names) != len(gt_names):
        extra = (names + gt_names)[min(len(names), len(gt_names))]
        raise UsageError(f"unmatched frame {extra!r}: {len(names)} predictions vs {len(gt_names)} masks")
    gt = (gt_values >= 0.5).astype(np.uint8)
    if scores.shape != gt.shape:
        raise UsageError(f"score tensor {scores.shape} does not match masks {gt.shape}")
    curve = metrics.roc3d(scores, gt, n_tau)
    report = metrics.auc_family(curve)
    precision, recall, f1 = metrics.f1(masks, gt)
    row = {"iou": metrics.iou(masks, gt), "precision": precision, "recall": recall, "f1": f1}
    row.update(report.as_dict())
    return row, curve


def cmd_eval(args):
    pred, gt = Path(args.pred), Path(args.gt)
    if _is_sequence_dir(gt):
        pairs = [(args.sequence or gt.name, pred, gt)]
    else:
        subdirs = sorted(p for p in gt.iterdir() if p.is_dir())
        if not subdirs:
            raise UsageError(f"{gt} contains no frames or sequence directories")
        pairs = [(p.name, pred / p.name, p) for p in subdirs]
        for name, p, _ in pairs:
            if not p.is_dir():
                raise UsageError(f"no prediction directory for sequence {name!r}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, p, g in pairs:
        try:
            row, curve = evaluate_sequence(p, g, args.n_tau)
        except (io.FormatError, ValueError) as exc:
            raise UsageError(f"{name}: {exc}") from None
        rows.append([name] + [row[k] for k in METRICS_HEADER[1:]])
        io.write_csv(out / f"roc_{name}.csv", ("tau", "fpr", "tpr"), curve.rows())
        print(f"{name}: iou={row['iou']:.4f} f1={row['f1']:.4f} auc_roc={row['auc_roc']:.4f}")
    io.write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    return 0


# -- check -----------------------------------------------------------------------


def cmd_check(args):
    results = checks.run_checks(tolerance=args.tolerance, seed=args.seed)
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(r.name for r in failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="neurstt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence with ground-truth masks")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--bg-rank", type=int, default=2)
    p.add_argument("--target-size", type=int, default=3)
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--start", type=float, nargs=2, metavar=("ROW", "COL"))
    p.add_argument("--velocity", type=float, nargs=2, metavar=("DROW", "DCOL"))
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--noise-snr-db", type=float, default=math.inf)
    p.add_argument("--cross-lines", type=int, default=0)
    p.add_argument("--vertical-lines", type=int, default=0)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="separate targets from a frame sequence")
    p.add_argument("--input", "-i")
    p.add_argument("--output", "-o")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--manifest", help="re-run with the configuration stored in a manifest")
    p.add_argument("--threads", type=int)
    p.add_argument("--lambda", dest="lambda", type=float, help="target trade-off (default 0.2)")
    p.add_argument("--phi", type=float, help="TV weight (default 5e-5)")
    p.add_argument("--kappa", type=float, help="temporal TV weight (default 100)")
    p.add_argument("--iters", type=int, help="iteration cap (default 2000)")
    p.add_argument("--rank-div", type=float, help="rank divisor (default 4)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 5e-4)")
    p.add_argument("--weight-decay", type=float, help="L2 weight decay (default 0.01)")
    p.add_argument("--depth", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--core-range", type=float)
    p.add_argument("--grid", choices=("index", "symmetric"))
    p.add_argument("--activation", choices=("sine", "relu", "leakyrelu", "tanh"))
    p.add_argument("--tv", choices=("neural3d", "neural_spatial", "discrete", "discrete3d", "none"))
    p.add_argument("--target-mode", choices=solver.TARGET_MODES)
    p.add_argument("--background-loss", choices=solver.BACKGROUND_LOSSES)
    p.add_argument("--detach-target", action="store_true", default=None)
    p.add_argument("--conv-window", type=int)
    p.add_argument("--conv-tol", type=float)
    p.add_argument("--k-sigma", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score predictions against ground-truth masks")
    p.add_argument("--pred", required=True, help="detect output dir, mask dir, or parent of per-sequence dirs")
    p.add_argument("--gt", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--sequence", help="row label for a single sequence")
    p.add_argument("--n-tau", type=int, default=metrics.DEFAULT_N_TAU)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the built-in correctness checks")
    p.add_argument("--tolerance", type=float, help="override the gradient-check relative tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
