"""``losparse`` command line: decompose, spectrum, train, evaluate, report.

Exit codes: 0 success, 2 configuration error, 3 numeric or training
failure, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import decomposition as dec
from .config import RunConfig, load_config
from .errors import BudgetError, LosparseError, StorageError
from .harness import evaluate, generate_task, pretrain, train_compress
from .importance import export_histogram
from .linalg import frobenius_norm, svd

HISTOGRAM_BINS = 20


def _write_atomic(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x))


def task_data(run: RunConfig):
    t = run.task
    return generate_task(t.seed, t.d_in, t.d_out, t.r_star, t.k_star, t.noise_std,
                         t.n_train, t.n_val, sparse_scale=t.sparse_scale)


def cmd_decompose(input_dir, output_dir, total_ratio, lowrank_ratio, out=sys.stdout):
    """Replace every dense matrix with a u/v/s triple at the budgeted rank.

    Prints ``name,rank,residual`` per matrix, where ``residual`` is the
    Frobenius norm of ``W - U @ V``. Returns those rows.
    """
    if not 0 < total_ratio <= 1 or lowrank_ratio <= 0:
        raise BudgetError(f"need 0 < total_ratio <= 1 and lowrank_ratio > 0, got {total_ratio}, {lowrank_ratio}")
    entries = ckpt.load_entries(input_dir)
    if not any(e.kind == "dense" for e in entries):
        raise ckpt.CheckpointFormatError(f"{input_dir}: no dense matrices to decompose")
    result, report = [], []
    for e in entries:
        if e.kind != "dense":
            result.append(e)
            continue
        d1, d2 = e.data.shape
        r = dec.rank_from_budget(d1, d2, lowrank_ratio)
        layer = dec.init_from_pretrained(e.data, r)
        residual = frobenius_norm(e.data - layer.U @ layer.V)
        result += [
            ckpt.MatrixEntry(f"{e.base}.u", "factor_u", layer.U),
            ckpt.MatrixEntry(f"{e.base}.v", "factor_v", layer.V),
            ckpt.MatrixEntry(f"{e.base}.s", "sparse_columns", layer.S, np.arange(d2)),
        ]
        report.append((e.name, r, residual))
    ckpt.save_entries(result, output_dir)
    out.write(_csv_text(["matrix_name", "rank", "residual"], [(n, r, _num(res)) for n, r, res in report]))
    return report


def _layer_weights(entries):
    groups = {}
    for e in entries:
        groups.setdefault(e.base, {})[e.kind] = e
    for base, g in groups.items():
        if "dense" in g:
            yield base, g["dense"].data
        elif {"factor_u", "factor_v", "sparse_columns"} <= g.keys():
            yield base, g["factor_u"].data @ g["factor_v"].data + g["sparse_columns"].data


def cmd_spectrum(input_dir, output_csv):
    """Write ``matrix_name,index,sigma`` rows, descending per matrix."""
    rows = []
    for name, w in _layer_weights(ckpt.load_entries(input_dir)):
        for i, s in enumerate(svd(w).singular_values):
            rows.append((name, i, _num(s)))
    _write_atomic(output_csv, _csv_text(["matrix_name", "index", "sigma"], rows))
    return rows


def metrics_csv(trace) -> str:
    n_layers = len(trace.rows[0].live_columns) if trace.rows else 0
    header = ["step", "loss", "p_t", "remaining_ratio"] + [f"live_cols_layer{i}" for i in range(n_layers)]
    rows = [[r.step, _num(r.loss), _num(r.p_t), _num(r.remaining_ratio), *r.live_columns] for r in trace.rows]
    return _csv_text(header, rows)


def cmd_train(config_path, output_dir, out=sys.stdout):
    """Pretrain densely, compress, and write checkpoint, metrics and histograms.

    Output directory contents: ``checkpoint/``, ``metrics.csv``,
    ``hist_layer{i}.csv`` (final-step neuron scores) and ``summary.json``.
    """
    run = load_config(config_path)
    output_dir = Path(output_dir)
    _, train, val = task_data(run)
    cfg = run.train
    dense = pretrain(train, list(run.task.dims), cfg.learning_rate, cfg.batch_size, run.task.seed)
    model, trace = train_compress(dense, train, cfg)

    ckpt.save_checkpoint(model, output_dir / "checkpoint")
    _write_atomic(output_dir / "metrics.csv", metrics_csv(trace))
    for i, scores in enumerate(trace.final_scores):
        hist = export_histogram(scores, HISTOGRAM_BINS)
        _write_atomic(output_dir / f"hist_layer{i}.csv",
                      _csv_text(["bin_low", "bin_high", "count"], [(_num(a), _num(b), c) for a, b, c in hist]))

    # validation loss of the stored (float32) weights, so cmd_evaluate reproduces it
    val_loss = evaluate(ckpt.load_checkpoint(output_dir / "checkpoint"), val)
    summary = {
        "mode": cfg.mode,
        "total_ratio": cfg.budget.total_ratio,
        "lowrank_ratio": cfg.budget.lowrank_ratio,
        "final_fraction": trace.schedule.final_fraction,
        "steps": cfg.total_steps,
        "final_train_loss": trace.rows[-1].loss,
        "remaining_ratio": trace.rows[-1].remaining_ratio,
        "val_loss": val_loss,
    }
    _write_atomic(output_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    out.write(f"{cfg.mode}: remaining_ratio={trace.rows[-1].remaining_ratio:.6f} val_loss={val_loss:.6f}\n")
    return model, trace, summary


def cmd_evaluate(checkpoint_dir, config_path, out=sys.stdout) -> float:
    run = load_config(config_path)
    _, _, val = task_data(run)
    loss = evaluate(ckpt.load_checkpoint(checkpoint_dir), val)
    out.write(f"{loss:.6f}\n")
    return loss


REPORT_HEADER = ["mode", "total_ratio", "lowrank_ratio", "remaining_ratio", "final_train_loss", "val_loss", "source"]


def cmd_report(metrics_dirs, output_csv):
    """Merge finished runs into one table sorted by (total_ratio, mode)."""
    if not metrics_dirs:
        raise StorageError("report needs at least one run directory")
    rows = []
    for d in metrics_dirs:
        d = Path(d)
        try:
            summary = json.loads((d / "summary.json").read_text())
            with open(d / "metrics.csv", newline="") as fh:
                trace_rows = list(csv.DictReader(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"cannot read run directory {d}: {exc}") from exc
        if not trace_rows:
            raise StorageError(f"{d / 'metrics.csv'} has no rows")
        last = trace_rows[-1]
        rows.append([summary["mode"], _num(summary["total_ratio"]), _num(summary["lowrank_ratio"]),
                     last["remaining_ratio"], last["loss"], _num(summary["val_loss"]), str(d)])
    rows.sort(key=lambda r: (float(r[1]), r[0], r[6]))
    _write_atomic(output_csv, _csv_text(REPORT_HEADER, rows))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="losparse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="factor dense matrices into U, V and a sparse residual")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--total-ratio", type=float, required=True)
    p.add_argument("--lowrank-ratio", type=float, required=True)

    p = sub.add_parser("spectrum", help="singular values of every matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("train", help="pretrain, compress and write a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("evaluate", help="validation loss of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)

    p = sub.add_parser("report", help="merge run directories into one comparison table")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--output", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "decompose":
            cmd_decompose(args.input, args.output, args.total_ratio, args.lowrank_ratio)
        elif args.command == "spectrum":
            cmd_spectrum(args.input, args.output)
        elif args.command == "train":
            cmd_train(args.config, args.output)
        elif args.command == "evaluate":
            cmd_evaluate(args.checkpoint, args.config)
        elif args.command == "report":
            cmd_report(args.dirs, args.output)
    except LosparseError as exc:
        print(f"losparse {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
