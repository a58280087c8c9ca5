"""Command-line entry point: ``tropical-cw <command> [flags]``.

Every command writes its artifacts into the output directory (``--out``, else
``$TROPICAL_CW_OUT``, else ``./out``) together with a ``<command>.manifest.json``
recording the command line, seed, package versions and output digests.
Primary outputs are byte-identical across reruns with the same flags.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attack import METHODS, AttackConfig, evaluate_suite, oscillation_demo
from .bisector import WEAK, STRICT, is_generic, sample_distribution, upper_bound
from .errors import TropicalError
from .neural import (
    TOPS,
    Dataset,
    TrainConfig,
    accuracy,
    init_net,
    load_idx,
    load_model,
    make_blobs,
    save_model,
    train,
    train_config_dict,
)
from .planar import L2_PLUS_F, TROP_PLUS_F, cw_gradient_field_2d
from .scene import add_field, bisector_scene, render_svg

OUT_ENV = "TROPICAL_CW_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument types ---------------------------------------------------------------------


def _point(text: str) -> tuple[Fraction, ...]:
    """Comma-separated decimals or fractions, converted exactly."""
    try:
        vals = tuple(Fraction(part.strip()) for part in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad point {text!r}; expected e.g. 1,-1.5,0")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"planar points need 3 coordinates, got {len(vals)}")
    return vals


def _float_pair(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return x, y


def _viewport(text: str) -> tuple[float, float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 4 or vals[0] >= vals[1] or vals[2] >= vals[3]:
        raise argparse.ArgumentTypeError("viewport is xmin,xmax,ymin,ymax with min < max")
    return vals


def _int_at_least(low: int):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if v < low:
            raise argparse.ArgumentTypeError(f"must be >= {low}, got {v}")
        return v

    return parse


def _widths(text: str) -> tuple[int, ...]:
    if text.strip() == "":
        return ()
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}")
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("layer widths must be positive")
    return vals


# -- output helpers ---------------------------------------------------------------------


class Run:
    """Collects the outputs of one invocation and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace, argv: Sequence[str]):
        self.command = command
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.results: dict = {}

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def record(self, path: Path) -> None:
        self.files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def manifest(self) -> Path:
        flags = {k: _jsonable(v) for k, v in sorted(vars(self.args).items()) if k not in ("handler", "out")}
        data = {
            "command": self.command,
            "argv": self.argv,
            "flags": flags,
            "seed": getattr(self.args, "seed", None),
            "versions": {
                "tropical_cw": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "outputs": self.files,
            "results": self.results,
        }
        path = self.out / f"{self.command}.manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def _table(header: list[str], rows: list[list]) -> tuple[str, str]:
    """The same table as CSV and as right-aligned text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    text = "\n".join("  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in cells) + "\n"
    return buf.getvalue(), text


# -- commands ---------------------------------------------------------------------------


def cmd_bound(args, run: Run) -> None:
    rows = [[n, upper_bound(n - 1)] for n in range(3, args.dplus1 + 1)]
    table_csv, text = _table(["dplus1", "upper_bound"], rows)
    run.write("bound.csv", table_csv)
    run.write("bound.txt", text)
    run.results = {"bounds": {str(n): b for n, b in rows}}
    print(text, end="")


def cmd_components(args, run: Run) -> None:
    hist = sample_distribution(args.dplus1, args.trials, args.seed, args.mode, args.workers)
    stem = f"components_d{args.dplus1}"
    run.write(f"{stem}.csv", hist.to_csv())
    run.write(f"{stem}.json", hist.to_json() + "\n")
    run.write(f"{stem}.txt", hist.to_text() + "\n")
    run.results = {"counts": {str(c): v for c, v in sorted(hist.counts.items())}}
    print(hist.to_text())


def _planar_notes(a, b) -> list[str]:
    """Degeneracy notes for the manifest; the library logs them as warnings."""
    notes = []
    if all(x - a[0] == y - b[0] for x, y in zip(a, b)):
        notes.append("degenerate input: a and b coincide on the torus, every point is equidistant")
    else:
        ok, problems = is_generic(tuple(y - x for x, y in zip(a, b)))
        if not ok:
            notes.append("non-generic input (" + "; ".join(problems) + "): piece count may differ")
    return notes


def cmd_bisector2d(args, run: Run) -> None:
    notes = _planar_notes(args.a, args.b)
    scene, pieces = bisector_scene(args.a, args.b, args.viewport)
    run.record(render_svg(scene, run.out / args.svg))
    doc = {
        "a": [str(v) for v in args.a],
        "b": [str(v) for v in args.b],
        "warnings": notes,
        "piece_count": len(pieces),
        "pieces": [p.to_dict() for p in pieces],
    }
    run.write(args.json, json.dumps(doc, indent=2) + "\n")
    rows = [[p.quadruple.label(), p.kind, f"({p.point[0]}, {p.point[1]})", f"({p.direction[0]}, {p.direction[1]})", p.t_lo, p.t_hi] for p in pieces]
    table_csv, text = _table(["piece", "kind", "point", "direction", "t_lo", "t_hi"], rows)
    run.write("bisector2d_pieces.csv", table_csv)
    run.write("bisector2d_pieces.txt", text)
    run.results = {"piece_count": len(pieces), "warnings": notes}
    print(text, end="")


def cmd_gradfield(args, run: Run) -> None:
    notes = _planar_notes(args.a, args.b)
    scene, _ = bisector_scene(args.a, args.b, args.viewport)
    field = cw_gradient_field_2d(args.a, args.b, args.objective, args.viewport, args.grid, args.tau, args.origin, args.lam)
    add_field(scene, field)
    run.record(render_svg(scene, run.out / args.svg))
    rows = []
    for iy, y in enumerate(field.ys):
        for ix, x in enumerate(field.xs):
            gx, gy = field.vectors[iy, ix]
            tie = bool(np.isnan(gx))
            rows.append([f"{x:.6g}", f"{y:.6g}", "" if tie else repr(float(gx)), "" if tie else repr(float(gy)), int(field.hinge_active[iy, ix]), int(tie)])
    table_csv, _ = _table(["x1", "x2", "neg_grad_x1", "neg_grad_x2", "hinge_active", "tie"], rows)
    run.write("gradfield.csv", table_csv)
    nodes = len(rows)
    ties = sum(r[5] for r in rows)
    active = int(field.hinge_active.sum())
    summary = [["nodes", nodes], ["ties", ties], ["hinge_active", active], ["distance_only", nodes - ties - active]]
    s_csv, text = _table(["quantity", "count"], summary)
    run.write("gradfield_summary.csv", s_csv)
    run.write("gradfield_summary.txt", text)
    run.results = {k: v for k, v in summary} | {"warnings": notes}
    print(text, end="")


def _dataset(args) -> tuple[Dataset, Dataset, Dataset]:
    """(train, validation, test) from blobs or an MNIST-style IDX directory."""
    if args.dataset == "blobs":
        blob_args = dict(dim=args.dim, classes=args.classes, spread=args.spread)
        return (
            make_blobs(args.n_train, seed=args.data_seed, split="train", **blob_args),
            make_blobs(args.n_val, seed=args.data_seed + 1, split="val", **blob_args),
            make_blobs(args.n_test, seed=args.data_seed + 2, split="test", **blob_args),
        )
    root = Path(args.dataset)
    full = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", split="test")
    order = np.random.default_rng(args.data_seed).permutation(len(full))
    if args.subset:
        order = order[: args.subset]
    n_val = max(1, len(order) // 10)
    return full.subset(order[n_val:], "train"), full.subset(order[:n_val], "val"), test


def cmd_train(args, run: Run) -> None:
    train_set, val_set, test_set = _dataset(args)
    net = init_net(train_set.inputs.shape[1], int(train_set.labels.max()) + 1, args.hidden, args.top, args.activation, args.seed)
    cfg = TrainConfig(lr=args.lr, max_epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer, seed=args.seed)
    net, hist = train(net, train_set, val_set, cfg)
    model_path = Path(args.model) if args.model else run.out / f"model_{args.top}.json"
    run.record(save_model(net, model_path))
    run.write(f"history_{args.top}.csv", hist.to_csv())
    rows = [[r.epoch, f"{r.lr:.0e}", f"{r.train_loss:.4f}", f"{r.val_acc:.4f}"] for r in hist.records]
    _, text = _table(["epoch", "lr", "train_loss", "val_acc"], rows)
    run.write(f"history_{args.top}.txt", text)
    acc = accuracy(net, test_set)
    run.results = {
        "test_accuracy": acc,
        "epochs": len(hist.records),
        "stopped_early": hist.stopped_early,
        "model": str(model_path),
        "train_config": train_config_dict(cfg),
    }
    print(text, end="")
    print(f"test accuracy {acc:.4f} ({len(test_set)} inputs); model saved to {model_path}")


def cmd_attack(args, run: Run) -> None:
    net = load_model(args.model)
    _, _, test_set = _dataset(args)
    if test_set.inputs.shape[1] != net.input_dim:
        raise TropicalError(f"ShapeError: model expects {net.input_dim} inputs, dataset has {test_set.inputs.shape[1]}")
    cfg = AttackConfig(method=args.method, msp_count=args.msp, max_steps=args.max_steps, kappa=args.kappa, seed=args.seed)
    tag = f"{net.top}"
    report = evaluate_suite(net, test_set, cfg, args.limit, tag, workers=args.workers)
    if report.empty:
        print("warning: no correctly classified inputs to attack", file=sys.stderr)
    stem = f"attack_{net.top}_{args.method}_msp{args.msp}"
    run.write(f"{stem}.csv", report.to_csv())
    run.write(f"{stem}.json", report.to_json() + "\n")
    rows = [[net.top, args.method, args.msp, report.total, report.successes, f"{report.success_rate:.4f}", f"{report.mean_l2_over_successes:.4f}"]]
    s_csv, text = _table(["model", "method", "msp", "attacked", "successes", "success_rate", "mean_l2"], rows)
    run.write(f"{stem}_summary.csv", s_csv)
    run.write(f"{stem}_summary.txt", text)
    run.results = {k: report.to_dict()[k] for k in ("total", "successes", "success_rate", "mean_l2_over_successes", "mean_l2_all_attempts", "empty")}
    print(text, end="")


def cmd_oscillation(args, run: Run) -> None:
    traj = oscillation_demo(args.step, args.start, args.iters)
    run.write("oscillation.csv", traj.to_csv())
    run.results = {"final_max_h": float(traj.values[-1]), "final_point": [float(v) for v in traj.points[-1]]}
    print(f"after {args.iters} steps of size {args.step}: x = ({traj.points[-1][0]:.6g}, {traj.points[-1][1]:.6g}), max h = {traj.values[-1]:.6g}")


# -- parser -----------------------------------------------------------------------------


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="blobs", help="'blobs' or a directory with MNIST IDX files")
    p.add_argument("--subset", type=_int_at_least(1), default=None, help="use this many training images (IDX only)")
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--dim", type=_int_at_least(1), default=20)
    p.add_argument("--classes", type=_int_at_least(2), default=10)
    p.add_argument("--spread", type=float, default=0.15)
    p.add_argument("--n-train", type=_int_at_least(1), default=3000)
    p.add_argument("--n-val", type=_int_at_least(1), default=300)
    p.add_argument("--n-test", type=_int_at_least(1), default=400)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tropical-cw", description="Tropical bisectors and Carlini-Wagner attacks on tropical networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=os.environ.get(OUT_ENV, "out"), help=f"output directory (default ${OUT_ENV} or ./out)")
        p.set_defaults(handler=handler)
        return p

    p = command("bound", cmd_bound, "table of the bisector piece-count bound")
    p.add_argument("--dplus1", type=_int_at_least(3), default=11)

    p = command("components", cmd_components, "Monte Carlo histogram of bisector piece counts")
    p.add_argument("--dplus1", type=_int_at_least(3), required=True)
    p.add_argument("--trials", type=_int_at_least(1), default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=(WEAK, STRICT), default=WEAK)
    p.add_argument("--workers", type=_int_at_least(1), default=1)

    p = command("bisector2d", cmd_bisector2d, "planar bisector as SVG and JSON")
    p.add_argument("--a", type=_point, required=True, help="e.g. 0,0,0 (use --a=-1,0,0 for a leading minus)")
    p.add_argument("--b", type=_point, required=True)
    p.add_argument("--svg", default="bisector2d.svg")
    p.add_argument("--json", default="bisector2d.json")
    p.add_argument("--viewport", type=_viewport, default=(-3.0, 3.0, -3.0, 3.0))

    p = command("gradfield", cmd_gradfield, "CW gradient arrows over the planar bisector")
    p.add_argument("--a", type=_point, required=True, help="centre of the true class")
    p.add_argument("--b", type=_point, required=True, help="centre of the other class")
    p.add_argument("--origin", type=_point, default=None, help="attack start (default a)")
    p.add_argument("--objective", choices=(L2_PLUS_F, TROP_PLUS_F), default=L2_PLUS_F)
    p.add_argument("--tau", type=float, default=None, help="threshold for the smoothed hinge")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--grid", type=_int_at_least(2), default=25)
    p.add_argument("--svg", default="gradfield.svg")
    p.add_argument("--viewport", type=_viewport, default=(-3.0, 3.0, -3.0, 3.0))

    p = command("train", cmd_train, "train and save a classifier")
    _data_flags(p)
    p.add_argument("--top", choices=TOPS, default="tropical")
    p.add_argument("--hidden", type=_widths, default=(64, 10), help="comma-separated hidden widths")
    p.add_argument("--activation", choices=("relu", "tanh", "identity"), default="relu")
    p.add_argument("--epochs", type=_int_at_least(1), default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_int_at_least(1), default=64)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default=None, help="where to save the model (default <out>/model_<top>.json)")

    p = command("attack", cmd_attack, "untargeted CW attack on a saved model")
    _data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=METHODS, default="vanilla")
    p.add_argument("--msp", type=_int_at_least(1), default=1, help="number of starting points")
    p.add_argument("--limit", type=_int_at_least(1), default=100, help="attack at most this many test inputs")
    p.add_argument("--max-steps", type=_int_at_least(1), default=1000)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--workers", type=_int_at_least(1), default=1)
    p.add_argument("--seed", type=int, default=0)

    p = command("oscillation", cmd_oscillation, "gradient descent on max(h) from a fixed start")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--start", type=_float_pair, default=(1.0, 0.05))
    p.add_argument("--iters", type=_int_at_least(1), default=100)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args.command, args, argv)
        args.handler(args, run)
        run.manifest()
    except (TropicalError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
