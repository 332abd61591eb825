"""Command-line front end: ``simulate``, ``run`` and ``check``.

Outputs are written with ``repr`` floats so identical inputs give
byte-identical files. Monte-Carlo runs are spread over the number of worker
processes given by ``IEKF_SLAM_WORKERS`` (default 1).
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .metrics import export_ellipses, metric_series, write_metrics_csv
from .observability import INFORMATION_SLACK
from .sim import FILTER_NAMES, SimConfig, replay_dataset, run_monte_carlo, write_dataset

KERNEL_TOL = 1e-12


def load_config(path):
    """Read a JSON experiment config.

    Besides the simulation fields it may hold ``filters`` (list of names)
    and ``audit`` (bool). Every simulation field must be present.
    """
    try:
        with open(path) as fh:
            text = fh.read()
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    extra = {k: raw.pop(k) for k in ("filters", "audit") if k in raw}
    try:
        config = SimConfig.from_dict(raw, require_all=True)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config, extra


def parse_filters(text):
    names = [n.strip() for n in text.split(",") if n.strip()]
    for n in names:
        if n not in FILTER_NAMES:
            raise ConfigError(f"unknown filter {n!r}; choose from {', '.join(FILTER_NAMES)}")
    if not names:
        raise ConfigError("no filters selected")
    return names


def _resolve_config(args):
    if args.config:
        config, extra = load_config(args.config)
    else:
        config, extra = SimConfig(), {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["n_runs"] = args.runs
    if overrides:
        config = SimConfig.from_dict({**config.to_dict(), **overrides})
    return config, extra


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# outputs


def write_audit_csv(path, results, filters):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "step", "filter", "shift", "kernel_residual", "info_prior", "info_pred",
                    "info_aug", "info_post", "ekf_residual_m"])
        for res in results:
            for name in filters:
                a = res[name].audit.arrays()
                kinds = res[name].audit.kinds
                for n in range(len(a["kernel"])):
                    for j, kind in enumerate(kinds):
                        w.writerow([res.seed, n + 1, name, kind] + [
                            repr(float(a[col][n, j]))
                            for col in ("kernel", "info_prior", "info_pred", "info_aug", "info_post")
                        ] + [repr(float(a["ekf_residual"][n]))])


def series_by_filter(results, filters):
    out = {}
    for name in filters:
        quad = np.array([r[name].quad for r in results])
        pos = np.array([r[name].pos_err for r in results])
        head = np.array([r[name].head_err for r in results])
        out[name] = metric_series(quad, pos, head)
    return out


def check_report(results, filters):
    """Pass/fail per filter for the kernel and information invariants."""
    report = {"checks": [], "passed": True}
    for name in filters:
        kernel = max(float(np.max(r[name].audit.arrays()["kernel"], initial=0.0)) for r in results)
        margin = max(r[name].audit.information_margin() for r in results)
        failures = sum(len(r[name].failures) for r in results)
        checks = [
            ("kernel_residual", kernel <= KERNEL_TOL, kernel, KERNEL_TOL),
            ("information_nonincreasing", margin <= 1.0 + INFORMATION_SLACK, margin, 1.0 + INFORMATION_SLACK),
            ("numerical_failures", failures == 0, failures, 0),
        ]
        for check, ok, worst, limit in checks:
            report["checks"].append(
                {"filter": name, "check": check, "pass": bool(ok), "worst": _num(worst), "limit": limit}
            )
            report["passed"] = report["passed"] and bool(ok)
    return report


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    config, _ = _resolve_config(args)
    out = Path(args.out)
    paths = write_dataset(out, config)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(paths)} runs of {config.n_steps} steps to {out}")
    return 0


def _results(args, filters, audit=True):
    if args.dataset:
        results, config = replay_dataset(args.dataset, filters, audit)
        return results, config
    config, _ = _resolve_config(args)
    return run_monte_carlo(config, filters, audit=audit), config


def cmd_run(args):
    if args.filters is None and args.config:
        extra = load_config(args.config)[1]
        filters = extra.get("filters", list(FILTER_NAMES))
        parse_filters(",".join(filters))
    else:
        filters = parse_filters(args.filters or ",".join(FILTER_NAMES))
    results, config = _results(args, filters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = series_by_filter(results, filters)
    write_metrics_csv(out / "metrics.csv", series)
    write_audit_csv(out / "audit.csv", results, filters)
    with open(out / "ellipses.json", "w") as fh:
        json.dump({"run": results[0].seed, "filters": {n: export_ellipses(results[0][n].final) for n in filters}},
                  fh, indent=2)
        fh.write("\n")
    last = config.steps_per_loop
    summary = {
        name: {
            "nees_pose_mean": _num(np.nanmean(s["nees_pose"])),
            "nees_pose_final_loop": _num(np.nanmean(s["nees_pose"][-last:])),
            "rms_pos_m_final": _num(s["rms_pos_m"][-1]),
            "rms_heading_rad_final": _num(s["rms_heading_rad"][-1]),
        }
        for name, s in series.items()
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_check(args):
    filters = parse_filters(args.filters or "iekf")
    results, _ = _results(args, filters)
    report = check_report(results, filters)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="iekf-slam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample a Monte-Carlo dataset of run files")
    s.add_argument("--config", help="JSON config; defaults to the built-in experiment")
    s.add_argument("--seed", type=int, help="base seed (run i uses base_seed + i)")
    s.add_argument("--runs", type=int, help="number of runs")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("run", cmd_run, "run filters and write metrics and audits"),
                              ("check", cmd_check, "audit invariants; exit status 0 iff all pass")):
        c = sub.add_parser(name, help=help_)
        src = c.add_mutually_exclusive_group()
        src.add_argument("--dataset", help="directory (or single file) written by simulate")
        src.add_argument("--config", help="JSON config to simulate in memory")
        c.add_argument("--seed", type=int)
        c.add_argument("--runs", type=int)
        c.add_argument("--filters", help=f"comma-separated subset of {','.join(FILTER_NAMES)}")
        c.add_argument("--out", required=(name == "run"),
                       help="output directory" if name == "run" else "optional report path")
        c.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
