"""Command line workbench: synth / train / fit / mesh / edit / eval / serve.

Every subcommand is a thin shell over one library call plus file I/O.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="headfield", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scan dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ids", type=int, required=True)
    s.add_argument("--exprs", type=int, default=1)
    s.add_argument("--points", type=int, default=4096)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="TrainConfig JSON file (desk defaults when omitted)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="JSON-lines metrics log path")

    s = sub.add_parser("fit", help="fit latents to a PLY scan")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--iters", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("mesh", help="extract a mesh from a checkpoint")
    s.add_argument("--ckpt", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--identity", help="identity label or index from the checkpoint")
    g.add_argument("--fit", help="FitResult JSON file")
    g.add_argument("--edit", help="EditedIdentity JSON file")
    s.add_argument("--expr", help="comma-separated expression code values")
    s.add_argument("--expr-scan", help="use the stored expression code of this scan key")
    s.add_argument("--res", type=int, default=128)
    s.add_argument("--out", required=True)

    s = sub.add_parser("edit", help="create region edits in latent space")
    s.add_argument("mode", choices=["sample", "swap", "interp"])
    s.add_argument("--ckpt", required=True)
    s.add_argument("--identity", required=True)
    s.add_argument("--source", help="second identity (swap/interp)")
    s.add_argument("--regions", help="comma-separated region indices")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--t", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-mirror", action="store_true",
                   help="do not co-edit symmetric partners when sampling")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="fit and score every scan in a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--csv")
    s.add_argument("--specificity", action="store_true")
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--iters", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("serve", help="serve the editing HTTP API")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--port", type=int, default=8801)
    s.add_argument("--workers", type=int, default=2)

    return p


def _resolve_identity(ckpt, label: str) -> torch.Tensor:
    if label in ckpt.identity_labels:
        return ckpt.identity_latent(label)
    try:
        return ckpt.identity_latent(int(label))
    except (ValueError, IndexError):
        raise UsageError(f"unknown identity {label!r}; "
                         f"checkpoint has {ckpt.identity_labels}")


def _expression_code(ckpt, args) -> torch.Tensor:
    if getattr(args, "expr_scan", None):
        return ckpt.expression_code(args.expr_scan)
    if getattr(args, "expr", None):
        vals = [float(v) for v in args.expr.split(",")]
        if len(vals) != ckpt.config.d_expr:
            raise UsageError(f"--expr needs {ckpt.config.d_expr} values")
        return torch.tensor(vals, dtype=torch.float32)
    return torch.zeros(ckpt.config.d_expr)


def _parse_regions(text) -> list:
    if not text:
        raise UsageError("--regions is required for this mode")
    return [int(v) for v in text.split(",")]


def run(args) -> int:
    from . import checkpoint as ckpt_io
    from . import editing, fitting, metrics, training
    from .meshio import load_ply, save_obj, save_ply
    from .model import extract_mesh

    if args.command == "synth":
        out = training.synthesize_dataset(args.out, args.ids, args.exprs,
                                          seed=args.seed, points_per_scan=args.points)
        print(f"wrote {args.ids * args.exprs} scans to {out}")
        return 0

    if args.command == "train":
        if args.config:
            cfg = training.TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
        else:
            cfg = training.desk_train_config()
        if args.steps is not None:
            cfg.steps = args.steps
        if args.seed is not None:
            cfg.seed = args.seed
        ckpt = training.train(args.data, cfg, log_path=args.log, progress=True)
        ckpt_io.save_checkpoint(ckpt, args.out)
        print(f"checkpoint written to {args.out}")
        return 0

    if args.command == "fit":
        ckpt = ckpt_io.load_checkpoint(args.ckpt)
        cloud = load_ply(args.scan)
        if args.noise > 0:
            cloud = fitting.add_noise(cloud, args.noise, seed=args.seed)
        result = fitting.fit(cloud, ckpt, fitting.FitOptions(iters=args.iters, seed=args.seed))
        Path(args.out).write_text(result.to_json())
        print(f"fit {'converged' if result.converged else 'diverged'} "
              f"in {result.seconds:.1f}s; best loss {result.trace[-1]:.5f}")
        return 0

    if args.command == "mesh":
        ckpt = ckpt_io.load_checkpoint(args.ckpt)
        overrides = None
        if args.identity:
            z = _resolve_identity(ckpt, args.identity)
        elif args.fit:
            result = fitting.FitResult.from_json(Path(args.fit).read_text())
            z = result.z_id
        else:
            edited = editing.EditedIdentity.from_json_dict(json.loads(Path(args.edit).read_text()))
            z, overrides = edited.base, edited.overrides
        z_exp = _expression_code(ckpt, args)
        if args.fit and not (args.expr or args.expr_scan):
            z_exp = fitting.FitResult.from_json(Path(args.fit).read_text()).z_exp
        mesh = extract_mesh(ckpt.model, z, z_exp, resolution=args.res, overrides=overrides)
        if mesh.is_empty:
            print("empty mesh: field has no zero crossing in the grid", file=sys.stderr)
            Path(args.out).write_text("")
            return 0
        save_obj(mesh, args.out)
        print(f"wrote {len(mesh.vertices)} vertices / {len(mesh.faces)} faces to {args.out}")
        return 0

    if args.command == "edit":
        ckpt = ckpt_io.load_checkpoint(args.ckpt)
        z = _resolve_identity(ckpt, args.identity)
        if args.mode == "sample":
            if ckpt.stats is None:
                raise RuntimeError("checkpoint has no latent statistics")
            edited = editing.sample_region(
                z, _parse_regions(args.regions), ckpt.stats, args.scale,
                seed=args.seed, mirror_symmetric=not args.no_mirror,
                topology=ckpt.topology)
        elif args.mode == "swap":
            if not args.source:
                raise UsageError("swap needs --source")
            src = _resolve_identity(ckpt, args.source)
            edited = editing.swap_regions(ckpt.model, z, src, _parse_regions(args.regions))
        else:
            if not args.source:
                raise UsageError("interp needs --source")
            src = _resolve_identity(ckpt, args.source)
            edited = editing.EditedIdentity(editing.interpolate(z, src, args.t))
        Path(args.out).write_text(json.dumps(edited.to_json_dict()))
        print(f"edit written to {args.out}")
        return 0

    if args.command == "eval":
        ckpt = ckpt_io.load_checkpoint(args.ckpt)
        report = metrics.evaluate_fit(
            ckpt, args.data, fitting.FitOptions(iters=args.iters, seed=args.seed),
            resolution=args.res, seed=args.seed)
        if args.specificity:
            dataset = training.load_dataset(args.data)
            reference = [r.cloud for r in dataset.records]
            report.specificity_curve = metrics.specificity(
                ckpt, reference, n_samples=2, stds=[0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                seed=args.seed)
        Path(args.report).write_text(report.to_json())
        if args.csv:
            Path(args.csv).write_text(report.to_csv())
        print(json.dumps(report.aggregate()))
        return 0

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        ckpt = ckpt_io.load_checkpoint(args.ckpt)
        app = create_app(ckpt, workers=args.workers)
        uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
        return 0

    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
