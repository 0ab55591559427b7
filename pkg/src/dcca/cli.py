"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 no correlated content, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .config import RunConfig
from .evaluation import BenchRecord, alignment_mae, run_benchmark, summarize, write_report
from .pipeline import align
from .signal import apply_warp
from .synth import FAMILIES, DriftSpec, NoiseSpec, make_record
from .transform import NoCorrelatedContent, as_transform, load_checkpoint, save_checkpoint

log = logging.getLogger("dcca")

EXIT_OK, EXIT_VALIDATION, EXIT_NO_CONTENT, EXIT_IO = 0, 1, 2, 3


def _spec_json(text):
    """JSON text, a path to a JSON file, or ``none``/``random``."""
    if text is None or text.lower() in ("random", "none"):
        return text.lower() if text else None
    p = Path(text)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _config(args) -> RunConfig:
    cfg = RunConfig.loads(Path(args.config).read_text()) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(mode=getattr(args, "mode", None), seed=getattr(args, "seed", None),
                              threads=args.threads)


def cmd_generate(args):
    drift = _spec_json(args.drift)
    noise = _spec_json(args.noise)
    duration_s = args.duration * 60.0
    if drift == "random" or drift is None:
        drift = DriftSpec.random(np.random.default_rng(args.seed), duration_s * 1000.0)
    elif drift == "none":
        drift = DriftSpec()
    else:
        drift = DriftSpec.from_dict(drift)
    noise = None if noise in (None, "none", "random") else NoiseSpec(**noise)
    rec = make_record(args.family, args.seed, duration_s, args.fs, drift, noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    dio.save_signal(out / f"s1.{ext}", rec.s1)
    dio.save_signal(out / f"s2.{ext}", rec.s2)
    dio.save_truth(out / "truth.csv", rec.truth)
    manifest = dict(dataset=args.family, records=[dict(record=f"{args.family}-{args.seed}", s1=f"s1.{ext}",
                                                       s2=f"s2.{ext}", truth="truth.csv")],
                    meta=rec.meta)
    (out / "manifest.json").write_text(json.dumps(dio._plain(manifest), indent=2))
    return EXIT_OK


def cmd_align(args):
    cfg = _config(args)
    s1, s2 = dio.load_signal(args.s1), dio.load_signal(args.s2)
    pretrained = load_checkpoint(args.pretrained) if args.pretrained else None
    torch_threads(cfg.threads)
    res = align(s1, s2, cfg, pretrained=pretrained)
    dio.save_warp(args.out, res.warp)
    if args.checkpoint and res.nets:
        save_checkpoint(args.checkpoint, res.nets)
    return EXIT_OK


def torch_threads(n: int) -> None:
    import torch
    torch.set_num_threads(max(1, int(n)))


def cmd_apply(args):
    s = dio.load_signal(args.signal)
    w = dio.load_warp(args.warp)
    dio.save_signal(args.out, apply_warp(s, w))
    return EXIT_OK


def cmd_evaluate(args):
    truth = dio.load_truth(args.truth)
    w = dio.load_warp(args.warp)
    t = np.arange(truth.t_ms[0], truth.t_ms[-1] + 1e-9, args.step_ms)
    mae, sd = alignment_mae(truth, w, t)
    with open(args.out, "w") as fh:
        fh.write("mae_ms,std_ms,n_points\n")
        fh.write(f"{mae!r},{sd!r},{len(t)}\n")
    print(f"MAE {mae:.3f} ms  std {sd:.3f} ms")
    return EXIT_OK


def _load_manifest(path) -> list[BenchRecord]:
    path = Path(path)
    doc = json.loads(path.read_text())
    docs = doc if isinstance(doc, list) else [doc]
    out = []
    for d in docs:
        for r in d["records"]:
            def load(r=r, root=path.parent):
                return (dio.load_signal(root / r["s1"]), dio.load_signal(root / r["s2"]),
                        dio.load_truth(root / r["truth"]))
            out.append(BenchRecord(d.get("dataset", "dataset"), r["record"], load))
    return out


def cmd_bench(args):
    cfg = _config(args)
    torch_threads(cfg.threads)
    records = _load_manifest(args.manifest)
    names = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    methods = {}
    for name in names:
        mcfg = cfg.with_overrides(mode=name)  # validates the name

        def run(s1, s2, repeat, mcfg=mcfg):
            return align(s1, s2, mcfg.with_overrides(seed=mcfg.seed + repeat)).warp
        methods[name] = run
    rows = run_benchmark(records, methods, args.repeats, deterministic=("idcca", "plw", "nlw"))
    summary = summarize(rows)
    csv_path, _ = write_report(rows, args.out, summary)
    for key, entry in summary.items():
        if "mae_mean" in entry:
            print(f"{key}: MAE {entry['mae_mean']:.2f} ms (median {entry['mae_median']:.2f}, "
                  f"std {entry['std_time']:.2f}), failures {entry['failures']}")
        else:
            print(f"{key}: all {entry['runs']} runs failed")
    return EXIT_OK


def cmd_plot_data(args):
    s1 = dio.load_signal(args.s1) if args.s1 else None
    s2 = dio.load_signal(args.s2) if args.s2 else None
    warp = dio.load_warp(args.warp) if args.warp else None
    transforms = None
    if args.kind == "transformed" and args.checkpoint:
        nets = load_checkpoint(args.checkpoint)
        transforms = (as_transform(nets.get("f1")), as_transform(nets.get("f2")))
    dio.export_plot_data(args.kind, args.out, s1, s2, warp, transforms=transforms)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcca", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a benchmark pair with ground truth")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", type=float, required=True, help="minutes")
    g.add_argument("--fs", type=float, default=200.0)
    g.add_argument("--drift", default="random", help="JSON, JSON file, 'random' or 'none'")
    g.add_argument("--noise", default="none", help="JSON, JSON file or 'none'")
    g.add_argument("--format", choices=("csv", "bin"), default="bin")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("align", help="estimate the warp between two signals")
    a.add_argument("--s1", required=True)
    a.add_argument("--s2", required=True)
    a.add_argument("--config")
    a.add_argument("--mode", choices=("idcca", "dcca", "bdcca", "plw", "nlw"))
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--checkpoint")
    a.add_argument("--pretrained")
    a.set_defaults(func=cmd_align)

    ap = sub.add_parser("apply", help="resample a sensor-2 signal with a warp")
    ap.add_argument("--signal", required=True)
    ap.add_argument("--warp", required=True)
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=cmd_apply)

    e = sub.add_parser("evaluate", help="score a warp against ground truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--warp", required=True)
    e.add_argument("--step-ms", type=float, default=1000.0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="run methods over a dataset manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--methods", default="idcca,plw,nlw")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    pd = sub.add_parser("plot-data", help="export tables for plotting")
    pd.add_argument("--kind", choices=("overlay", "knots", "transformed"), required=True)
    pd.add_argument("--s1")
    pd.add_argument("--s2")
    pd.add_argument("--warp")
    pd.add_argument("--checkpoint")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoCorrelatedContent as exc:
        print(f"alignment failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONTENT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
