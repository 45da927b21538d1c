"""Command-line entry point: ``dpnmrf <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .dpn import complexity_report, dpn_forward, leading_digits
from .metrics import evaluate
from .mf_oracle import run_mf
from .synth import synth_scene
from .tensor_core import VolumeShape, build_temporal_links
from .train import TrainConfig, train_incremental

COMPARE_TOL = 1e-5


class CLIError(Exception):
    pass


def _shape(text):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like TxHxW, got {text!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"shape must look like TxHxW, got {text!r}")
    return dims


def _pair(text):
    try:
        u, v = (float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected u,v, got {text!r}")
    return (u, v)


def _load_inputs(args):
    p = dio.read_tensor(args.unary).astype(np.float64)
    T = p.shape[0]
    img = dio.read_ppm(args.image, frames=T)
    if img.shape[:3] != p.shape[:3]:
        raise CLIError(f"image {img.shape[:3]} does not match unary {p.shape[:3]}")
    links = None
    if args.flow:
        flow = dio.read_flo(args.flow, frames=T - 1)
        links = build_temporal_links(flow, VolumeShape(*p.shape[:3]))
    elif T > 1:
        links = build_temporal_links(np.zeros((T - 1,) + p.shape[1:3] + (2,)), VolumeShape(*p.shape[:3]))
    cfg = dio.load_config(args.config) if args.config else dio.RunConfig()
    return p, img, links, cfg


def _write_outputs(args, q):
    dio.write_tensor(args.out, q)
    if args.labels:
        dio.write_pgm_label(args.labels, q.argmax(axis=-1))


def cmd_synth(args):
    scene = synth_scene(args.seed, args.shape, args.labels, args.noise, args.motion)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_tensor(out / "unary.dpt", scene.unary)
    dio.write_ppm(out / "image.ppm", scene.image)
    dio.write_pgm_label(out / "gt.pgm", scene.labels)
    dio.write_flo(out / "flow.flo", scene.flow)
    return 0


def cmd_infer(args):
    p, img, links, rc = _load_inputs(args)
    cfg = rc.pairwise(p.shape[-1])
    q = dpn_forward(p, img, cfg, links, eps=rc.eps)
    _write_outputs(args, q)
    return 0


def cmd_oracle(args):
    p, img, links, rc = _load_inputs(args)
    cfg = rc.pairwise(p.shape[-1])
    iters = args.iters if args.iters is not None else rc.iterations
    schedule = {"sync": "synchronous", "seq": "sequential"}.get(args.schedule, args.schedule)
    q, trace = run_mf(p, img, cfg, links, max_iters=iters, tol=rc.tol, schedule=schedule, eps=rc.eps)
    _write_outputs(args, q)
    trace_path = args.trace or str(Path(args.out).with_suffix(".csv"))
    Path(trace_path).write_text(trace.to_csv())
    return 0


def cmd_compare(args):
    a = dio.read_tensor(args.a).astype(np.float64)
    b = dio.read_tensor(args.b).astype(np.float64)
    if a.shape != b.shape:
        raise CLIError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    linf = float(diff.max())
    print(f"linf {linf:.9g}")
    print(f"mean_abs {float(diff.mean()):.9g}")
    return 0 if linf < COMPARE_TOL else 1


def _scene_dirs(root: Path):
    if (root / "unary.dpt").exists():
        return [root]
    dirs = sorted(d for d in root.iterdir() if (d / "unary.dpt").exists())
    if not dirs:
        raise CLIError(f"no scenes (directories with unary.dpt) under {root}")
    return dirs


def _load_scene(d: Path):
    p = dio.read_tensor(d / "unary.dpt").astype(np.float64)
    T = p.shape[0]
    img = dio.read_ppm(d / "image.ppm", frames=T)
    gt = dio.read_pgm_label(d / "gt.pgm", frames=T)
    links = None
    if T > 1:
        flow_path = d / "flow.flo"
        flow = dio.read_flo(flow_path, frames=T - 1) if flow_path.exists() else np.zeros((T - 1,) + p.shape[1:3] + (2,))
        links = build_temporal_links(flow, VolumeShape(*p.shape[:3]))
    return p, img, links, gt


def cmd_train(args):
    rc = dio.load_config(args.config) if args.config else dio.RunConfig()
    data = [_load_scene(d) for d in _scene_dirs(Path(args.data))]
    cfg0 = rc.pairwise(data[0][0].shape[-1])
    tc = TrainConfig(learning_rate=rc.learning_rate,
                     iterations=args.iters if args.iters is not None else rc.train_iterations,
                     stage=args.stage, seed=rc.seed, lr_scales=rc.lr_scales)
    cfg, history = train_incremental(data, cfg0, tc, eps=rc.eps)
    extra = {k: v for k, v in rc.to_dict().items()
             if k not in ("w1", "w2", "m", "t_m", "n", "t_n", "K", "lin_a", "lin_b", "contexts")}
    dio.save_config(args.out, dio.RunConfig.from_pairwise(cfg, **extra))
    hist_path = args.history or str(Path(args.out).with_suffix(".csv"))
    lines = ["iter,loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
    Path(hist_path).write_text("\n".join(lines) + "\n")
    return 0


def _load_boxes(path):
    doc = json.loads(Path(path).read_text())
    entries = doc["boxes"] if isinstance(doc, dict) else doc
    per_image = {}
    for e in entries:
        img = int(e.get("frame", 0))
        per_image.setdefault(img, {}).setdefault(int(e["label"]), []).append(tuple(int(v) for v in e["box"]))
    return per_image


def cmd_eval(args):
    pred = dio.read_pgm_label(args.pred, frames=args.frames)
    gt = dio.read_pgm_label(args.gt, frames=args.frames)
    if pred.shape != gt.shape:
        raise CLIError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    L = args.num_labels
    if L is None:
        vals = np.concatenate([pred[pred != 255], gt[gt != 255]])
        L = int(vals.max()) + 1 if vals.size else 1
    boxes = None
    if args.gt_boxes:
        per_image = _load_boxes(args.gt_boxes)
        boxes = [per_image.get(t, {}) for t in range(pred.shape[0])]
    report = evaluate([(pred, gt)], L, gt_boxes=boxes, tol_px=args.tol)
    sys.stdout.write(report.to_text())
    doc = json.dumps(report.as_dict(), indent=1, sort_keys=True) + "\n"
    if args.json:
        Path(args.json).write_text(doc)
    else:
        sys.stdout.write(doc)
    return 0


REFERENCE_2D = dict(shape=(1, 512, 512), L=21, K=5, batch=10, m=50, n=9, t_m=1, t_n=1)


def cmd_bench(args):
    if args.paper_config or not args.config:
        setup = REFERENCE_2D
        counts = complexity_report(setup["shape"], setup["L"], setup["K"], batch=setup["batch"],
                                   m=setup["m"], n=setup["n"], t_m=setup["t_m"], t_n=setup["t_n"])
        label = "reference 2-D config: L=21 K=5 N=512 m=50 n=9 batch=10"
    else:
        rc = dio.load_config(args.config)
        counts = complexity_report(args.shape, args.num_labels, rc.K, batch=args.batch,
                                   m=rc.m, n=rc.n, t_m=rc.t_m, t_n=rc.t_n)
        label = f"config {args.config}"
    print(label)
    print(f"{'layer':<6}{'operations':>22}{'approx':>10}")
    for layer, v in counts.items():
        print(f"{layer:<6}{v:>22d}{leading_digits(v):>10}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dpnmrf", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic scene")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shape", type=_shape, default=(2, 64, 64))
    s.add_argument("--labels", type=int, default=4)
    s.add_argument("--noise", type=float, default=0.45)
    s.add_argument("--motion", type=_pair, default=(0.0, 0.0))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    for name, func, hlp in (("infer", cmd_infer, "one DPN pass"),
                            ("oracle", cmd_oracle, "explicit mean-field iterations")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--unary", required=True)
        s.add_argument("--image", required=True)
        s.add_argument("--flow")
        s.add_argument("--config")
        s.add_argument("--out", required=True)
        s.add_argument("--labels")
        if name == "oracle":
            s.add_argument("--iters", type=int)
            s.add_argument("--schedule", choices=["sync", "seq", "synchronous", "sequential"],
                           default="sync")
            s.add_argument("--trace", help="CSV trace path (default: --out with .csv)")
        s.set_defaults(func=func)

    s = sub.add_parser("compare", help="max and mean absolute difference of two tensors")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("train", help="gradient descent on one training stage")
    s.add_argument("--stage", required=True, choices=["triple_penalty", "label_contexts", "joint"])
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--history", help="loss CSV path (default: --out with .csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="segmentation metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--gt-boxes")
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--num-labels", type=int)
    s.add_argument("--tol", type=int, default=2)
    s.add_argument("--json", help="write the key-value report here instead of stdout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="per-layer operation counts")
    s.add_argument("--paper-config", action="store_true")
    s.add_argument("--config")
    s.add_argument("--shape", type=_shape, default=(1, 512, 512))
    s.add_argument("--num-labels", type=int, default=21)
    s.add_argument("--batch", type=int, default=10)
    s.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, CLIError, FloatingPointError, KeyError) as e:
        print(f"dpnmrf {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
