"""Command-line entry point: ``dualspace gen-data | run | report``.

Run directory layout::

    <out>/config.snapshot        flat key=value config actually used
    <out>/report.json            experiment reports (+ comparison for `both`)
    <out>/losses_<arm>.csv       phase,epoch,metric,value
    <out>/samples_<arm>.csv      generated samples in data space
    <out>/samples_<arm>.pgm      sample grid (pixel data only)
    <out>/latent_samples_dual_space.csv
    <out>/models/*.dsgp          parameter files
    <out>/FAILED                 written when a phase aborts

Exit codes: 0 success, 1 configuration error, 2 runtime/training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline
from .artifacts import image_grid, write_loss_svg, write_matrix_csv, write_pgm
from .config import ConfigError, dump_flat, load_config, parse_overrides
from .data import Dataset

log = logging.getLogger("dualspace")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualspace", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a dataset and its metadata")
    _add_common(g)

    r = sub.add_parser("run", help="run one or both experimental arms")
    r.add_argument("arm", choices=("dual", "direct", "both"))
    _add_common(r)
    r.add_argument("--parallel", action="store_true", help="run the two arms of `both` concurrently")

    rep = sub.add_parser("report", help="summarize a completed run directory")
    rep.add_argument("run_dir")
    return parser


def _load(args):
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, "data_out")
    d = pipeline.build_dataset(cfg.data, cfg.seed)
    write_dataset(d, out)
    (out / "config.snapshot").write_text(dump_flat(cfg))
    print(f"wrote {d.n} samples (D={d.dim}) to {out}")
    return EXIT_OK


def write_dataset(d: Dataset, out: Path) -> None:
    extra = {}
    if d.labels is not None:
        extra["label"] = d.labels
    extra["heldout"] = d.heldout_mask.astype(np.int64)
    if d.params is not None:
        for k, v in d.params.items():
            if k != "kind":
                extra[f"param_{k}"] = np.asarray(v, dtype=np.float64)
    write_matrix_csv(out / "dataset.csv", d.samples, extra=extra)
    meta = dict(d.meta, n_rows=d.n, dim=d.dim, n_heldout=int(d.heldout_mask.sum()))
    _dump_json(out / "dataset.json", meta)
    if d.is_pixel and d.meta.get("side"):
        write_pgm(out / "dataset.pgm", image_grid(d.samples[:64], d.meta["side"]))


# ---------------------------------------------------------------- run


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, "run_out")
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    (out / "config.snapshot").write_text(dump_flat(cfg))
    try:
        dataset = pipeline.build_dataset(cfg.data, cfg.seed)
        arms = {"dual": ["dual_space"], "direct": ["direct"], "both": ["direct", "dual_space"]}[args.arm]
        runners = {"dual_space": pipeline.run_dual_space, "direct": pipeline.run_direct}
        if args.parallel and len(arms) > 1:
            with ThreadPoolExecutor(max_workers=len(arms)) as pool:
                futures = [pool.submit(runners[a], cfg, dataset) for a in arms]
                results = [f.result() for f in futures]
        else:
            results = [runners[a](cfg, dataset) for a in arms]
        for res in results:
            pipeline.write_arm_artifacts(res, out, dataset)
        reports = [r.report for r in results]
        comparison = pipeline.compare(reports) if len(reports) == 2 else None
    except (pipeline.PhaseError, ValueError, ArithmeticError, OSError) as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _dump_json(out / "report.json", {
        "status": "complete",
        "arms": [r.arm for r in reports],
        "reports": [r.to_dict() for r in reports],
        "comparison": comparison,
    })
    print(f"run complete: {out}")
    if comparison is not None:
        print(format_summary(comparison))
    return EXIT_OK


# ---------------------------------------------------------------- report


def _fmt_num(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def format_summary(summary: dict) -> str:
    sp = summary["speedup"]
    lines = [
        f"speedup of {summary['candidate_arm']} over {summary['baseline_arm']} (dataset={summary['dataset']}, seed={summary['seed']})",
        f"  {'accounting':<16}{'FLOP ratio':>12}{'wall-clock ratio':>20}",
    ]
    for name, label in (("gan_phase", "GAN phase only"), ("total_with_ae", "total incl. AE")):
        fr, wr = sp[name]["flops_ratio"], sp[name]["wall_clock_ratio"]
        lines.append(f"  {label:<16}{_ratio_str(fr):>12}{_ratio_str(wr):>20}")
    return "\n".join(lines)


def _ratio_str(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def format_metrics(reports: list[dict]) -> str:
    keys: list[str] = []
    for r in reports:
        for k in r["metrics"]:
            if k not in keys:
                keys.append(k)
    names = [r["arm"] for r in reports]
    width = max(28, *(len(k) + 2 for k in keys))
    lines = [f"{'metric':<{width}}" + "".join(f"{n:>20}" for n in names)]
    for k in keys:
        cells = []
        for r in reports:
            v = r["metrics"].get(k)
            if isinstance(v, (list, dict)):
                v = json.dumps(v, separators=(",", ":"))
                v = v if len(v) <= 18 else v[:15] + "..."
            cells.append(f"{_fmt_num(v):>20}")
        lines.append(f"{k:<{width}}" + "".join(cells))
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / "report.json"
    if (run_dir / "FAILED").exists() or not report_path.is_file():
        print(f"error: incomplete run directory {run_dir} (missing report.json or FAILED marker present)",
              file=sys.stderr)
        return EXIT_RUNTIME
    doc = json.loads(report_path.read_text())
    reports = doc["reports"]
    if len(reports) == 2:
        summary = pipeline.compare([pipeline.ExperimentReport.from_dict(r) for r in reports])
        print(format_summary(summary))
        print()
    print(format_metrics(reports))

    for i, r in enumerate(reports):
        series = {f"{phase}/{name}": vals for phase, s in r["losses"].items() for name, vals in s.items()}
        suffix = r["arm"] if [x["arm"] for x in reports].count(r["arm"]) == 1 else f"{r['arm']}_{i}"
        write_loss_svg(run_dir / f"losses_{suffix}.svg", series, title=f"{r['arm']} losses")

    snapshot = run_dir / "config.snapshot"
    if snapshot.is_file():
        try:
            cfg = load_config(snapshot)
            dataset = pipeline.build_dataset(cfg.data, cfg.seed)
        except (ConfigError, ValueError, OSError) as exc:
            log.warning("cannot rebuild dataset for the sample grid: %s", exc)
            dataset = None
        side = dataset.meta.get("side") if dataset is not None else None
        if dataset is not None and dataset.is_pixel and side:
            _write_comparison_grid(run_dir, dataset, [r["arm"] for r in reports], side)
    print(f"\nplots written to {run_dir}")
    return EXIT_OK


def _write_comparison_grid(run_dir: Path, dataset: Dataset, arms: list[str], side: int, per_row: int = 8) -> None:
    """Rows of real held-in samples followed by rows of each arm's generated samples."""
    from .artifacts import read_matrix_csv

    blocks = [dataset.train_samples()[:per_row * 2]]
    for arm in dict.fromkeys(arms):
        path = run_dir / f"samples_{arm}.csv"
        if path.is_file():
            blocks.append(read_matrix_csv(path)[1][:per_row * 2])
    write_pgm(run_dir / "samples_vs_real.pgm", image_grid(np.vstack(blocks), side, ncols=per_row))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"gen-data": cmd_gen_data, "run": cmd_run, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
