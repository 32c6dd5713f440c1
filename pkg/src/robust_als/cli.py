"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime/numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, dump_config, parse_config
from .estimator import estimate
from .oracle import oracle_identity_check
from .ssm import simulate

log = logging.getLogger("robust_als")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    """17 significant digits, or ';'-joined column-major entries for matrices."""
    arr = np.asarray(x, dtype=float)
    if arr.size == 1:
        return format(float(arr.reshape(-1)[0]), ".17g")
    return ";".join(format(float(v), ".17g") for v in arr.reshape(-1, order="F"))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Write each file via a temp file and atomic rename."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, out_dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


SUMMARY_HEADER = ["method", "rmse_Q", "rmse_R", "mean_Q", "mean_R", "rmse_state"]


def summary_rows(summary: ex.McSummary, lead=()):
    for method, s in summary.methods.items():
        yield [*lead, method, fmt(s.rmse_Q), fmt(s.rmse_R), fmt(s.mean_Q), fmt(s.mean_R), fmt(s.rmse_state)]


def trial_rows(summary: ex.McSummary, eval_length: int, lead=()):
    for t in summary.trials:
        if t.failed:
            yield [*lead, t.trial_index, t.seed, "", "", "", "", t.error]
            continue
        for method in summary.methods:
            est = t.estimates[method]
            rmse = (t.sse[method] / eval_length) ** 0.5
            yield [*lead, t.trial_index, t.seed, method, fmt(est.Q), fmt(est.R), fmt(rmse), ""]


TRIAL_HEADER = ["trial", "seed", "method", "Q_hat", "R_hat", "rmse_state", "error"]


# --- SVG -------------------------------------------------------------------

_COLORS = {"oracle": "#000000", "als_irls": "#d62728", "als": "#1f77b4", "student_t": "#2ca02c", "mckf": "#9467bd"}


def svg_lines(title: str, xlabel: str, series: dict[str, tuple[list, list]], logy: bool = False) -> str:
    """Minimal line chart; ``series`` maps label -> (xs, ys)."""
    W, Hh, m = 560, 360, 50
    xs = [x for sx, _ in series.values() for x in sx]
    ys = [y for _, sy in series.values() for y in sy if np.isfinite(y) and (y > 0 or not logy)]
    tf = (lambda y: np.log10(y)) if logy else (lambda y: y)
    x0, x1 = min(xs), max(xs)
    y0, y1 = (tf(min(ys)), tf(max(ys))) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return m + (x - x0) / (x1 - x0) * (W - 2 * m)

    def py(y):
        return Hh - m - (tf(y) - y0) / (y1 - y0) * (Hh - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{Hh}">',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{W / 2}" y="{Hh - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{Hh - 2 * m}" fill="none" stroke="#888"/>',
    ]
    for i, (label, (sx, sy)) in enumerate(series.items()):
        color = _COLORS.get(label, "#444")
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy) if y > 0 or not logy)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        parts.append(f'<text x="{W - m + 4}" y="{m + 14 * i + 10}" font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def svg_scatter(title: str, points: dict[str, list[tuple[float, float]]], truth: tuple[float, float]) -> str:
    W, Hh, m = 560, 360, 50
    allp = [p for ps in points.values() for p in ps] + [truth]
    lx = np.log10([max(p[0], 1e-6) for p in allp])
    ly = np.log10([max(p[1], 1e-6) for p in allp])
    x0, x1, y0, y1 = lx.min(), lx.max() + 1e-9, ly.min(), ly.max() + 1e-9

    def pt(p):
        x = m + (np.log10(max(p[0], 1e-6)) - x0) / (x1 - x0) * (W - 2 * m)
        y = Hh - m - (np.log10(max(p[1], 1e-6)) - y0) / (y1 - y0) * (Hh - 2 * m)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{Hh}">',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{Hh - 2 * m}" fill="none" stroke="#888"/>',
    ]
    for label, ps in points.items():
        color = _COLORS.get(label, "#444")
        for p in ps:
            x, y = pt(p)
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}" fill-opacity="0.6"/>')
    x, y = pt(truth)
    parts.append(f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="middle" font-size="16">*</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


# --- subcommands -------------------------------------------------------------


@contextmanager
def _mapper(jobs: int):
    if jobs <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield lambda fn, items: pool.map(fn, items, chunksize=1)


def _cmd_simulate(cfg, args):
    m = cfg.model
    seed = cfg.trial_seed(0)
    warm = simulate(m, cfg.true_noise, cfg.contamination, np.zeros(m.n_x), cfg.estimator.warmup_length, seed)
    header = ["k"] + [f"x{i}" for i in range(m.n_x)] + [f"z{i}" for i in range(m.n_z)] + ["outlier"]
    rows = (
        [k, *map(fmt, warm.states[k]), *map(fmt, warm.measurements[k]), int(warm.outlier_flags[k])]
        for k in range(len(warm))
    )
    return {"trajectory.csv": csv_text(header, rows)}


def _load_measurements(path: str, n_z: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = [f"z{i}" for i in range(n_z)]
        try:
            return np.array([[float(r[c]) for c in cols] for r in reader])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: expected columns {cols}") from exc


def _cmd_estimate(cfg, args):
    m = cfg.model
    if args.measurements:
        z = _load_measurements(args.measurements, m.n_z)
    else:
        seed = cfg.trial_seed(0)
        z = simulate(m, cfg.true_noise, cfg.contamination, np.zeros(m.n_x), cfg.estimator.warmup_length, seed).measurements
    rows = []
    for method, robust in (("als", False), ("als_irls", True)):
        run = estimate(m, z, replace(cfg.estimator, cleaning_enabled=robust, robust_enabled=robust))
        for b, (est, nflag) in enumerate(zip(run.per_batch_estimates, run.per_batch_flag_counts)):
            rows.append([method, b, fmt(est.Q), fmt(est.R), nflag])
        rows.append([method, "final", fmt(run.final.Q), fmt(run.final.R), ""])
    return {"estimate.csv": csv_text(["method", "batch", "Q_hat", "R_hat", "n_flagged"], rows)}


def _cmd_mc(cfg, args):
    with _mapper(args.jobs) as mapper:
        summary = ex.run_monte_carlo(cfg, mapper)
    files = {
        "summary.csv": csv_text(SUMMARY_HEADER, summary_rows(summary)),
        "trials.csv": csv_text(TRIAL_HEADER, trial_rows(summary, cfg.eval_length)),
    }
    pts = {
        m: [(float(t.estimates[m].Q.flat[0]), float(t.estimates[m].R.flat[0])) for t in summary.trials if not t.failed]
        for m in ex.ESTIMATED
        if m in summary.methods
    }
    if pts:
        files["scatter.svg"] = svg_scatter("Q_hat vs R_hat (log-log)", pts, (cfg.true_Q, cfg.true_R))
    return files


def _sweep_files(rows, lead_name, cfg):
    out_rows, trows = [], []
    for value, summary in rows:
        out_rows.extend(summary_rows(summary, (fmt(value),)))
        trows.extend(trial_rows(summary, cfg.eval_length, (fmt(value),)))
    files = {
        "sweep.csv": csv_text([lead_name, *SUMMARY_HEADER], out_rows),
        "trials.csv": csv_text([lead_name, *TRIAL_HEADER], trows),
    }
    xs = [v for v, _ in rows]
    for metric in ("rmse_Q", "rmse_R"):
        series = {
            m: (xs, [getattr(s.methods[m], metric) for _, s in rows])
            for m in ex.ESTIMATED
            if m in rows[0][1].methods
        }
        if series:
            files[f"{metric}.svg"] = svg_lines(f"{metric} vs {lead_name}", lead_name, series, logy=True)
    return files


def _cmd_sweep_eps(cfg, args):
    with _mapper(args.jobs) as mapper:
        rows = ex.sweep_epsilon(cfg, map_fn=mapper)
    return _sweep_files(rows, "epsilon", cfg)


def _cmd_sweep_n(cfg, args):
    with _mapper(args.jobs) as mapper:
        rows = ex.sweep_lag_window(cfg, map_fn=mapper)
    return _sweep_files(rows, "N", cfg)


def _cmd_oracle_check(cfg, args):
    report = oracle_identity_check(args.systems, seed=cfg.base_seed)
    print(f"oracle-check systems={report.n_systems} max_rel_error={report.max_rel_error:.3e}")
    text = csv_text(["systems", "max_rel_error", "passed"], [[report.n_systems, fmt(report.max_rel_error), int(report.passed)]])
    if not report.passed:
        raise RuntimeError(f"oracle identity violated: max relative error {report.max_rel_error:.3e}")
    return {"oracle_check.csv": text}


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "mc": _cmd_mc,
    "sweep-eps": _cmd_sweep_eps,
    "sweep-n": _cmd_sweep_n,
    "oracle-check": _cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robust-als", description="Outlier-robust noise covariance identification experiments.")
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI config file (defaults used when omitted)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed (overrides experiment.base_seed)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--systems", type=int, default=200, help="oracle-check: number of random systems")
    p.add_argument("--measurements", help="estimate: CSV with columns z0..z{n_z-1}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1 or args.systems < 1:
            raise UsageError("--jobs and --systems must be >= 1")
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        text = ""
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from exc
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"experiment.base_seed={args.seed}")
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        files = COMMANDS[args.subcommand](cfg, args)
        files["config.echo"] = dump_config(cfg)
        write_outputs(Path(args.out), files)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        msg = str(exc).replace("\n", " ")
        print(f"error: runtime: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("wrote %s", ", ".join(sorted(files)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
