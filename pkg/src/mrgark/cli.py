"""Command-line front end: order reports, convergence studies and stability scans.

Every command accepts ``--config file.json``; explicit flags override the
file.  Exit codes: 0 success, 1 criteria not met, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .convergence import CSV_HEADER, MIN_STEP_SIZES, convergence_study
from .integrator import JAC_MODES
from .methods import REGISTRY, build_method
from .order_conditions import check_mr_order, check_spc
from .problems import PROBLEMS, build_problem
from .stability import ScanSlice, stability_scan
from .tableau import TableauError

EXIT_OK, EXIT_UNMET, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "check": {"order": 3, "mode": "ros", "format": "text"},
    "converge": {"problem": "pr", "H0": 1.0 / 512.0, "halvings": 5, "jac_mode": "exact", "params": {}},
    "stability": {"re_min": -10.0, "re_max": 2.0, "re_n": 61, "im_min": -6.0, "im_max": 6.0, "im_n": 61,
                  "slice": "diagonal", "fixed": 0.0, "ratio": 1.0},
}
METHOD_KEYS = ("gamma", "beta21", "M")


class UsageError(Exception):
    pass


def _parse_param(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"value of {key!r} must be a number") from exc


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("method", nargs="?", help="registered method name (see 'methods list')")
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta21", type=float)
    p.add_argument("--M", type=int, help="number of micro-steps per macro-step")
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrgark", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="evaluate order conditions of a registered method")
    _add_method_flags(p)
    p.add_argument("--order", type=int)
    p.add_argument("--mode", choices=("ros", "row"))
    p.add_argument("--format", choices=("text", "csv"))

    p = sub.add_parser("converge", help="fixed-step convergence study, CSV output")
    _add_method_flags(p)
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--param", action="append", type=_parse_param, default=None, metavar="KEY=VALUE",
                   help="problem parameter (repeatable)")
    p.add_argument("--H0", type=float, help="largest macro-step size")
    p.add_argument("--halvings", type=int, help=f"number of step sizes H0, H0/2, ... (at least {MIN_STEP_SIZES})")
    p.add_argument("--jac-mode", dest="jac_mode", choices=JAC_MODES)
    p.add_argument("--output", type=Path, help="CSV path (a PNG figure is written next to it)")

    p = sub.add_parser("stability", help="scan |R| over a complex grid, CSV output")
    _add_method_flags(p)
    for axis in ("re", "im"):
        p.add_argument(f"--{axis}-min", dest=f"{axis}_min", type=float)
        p.add_argument(f"--{axis}-max", dest=f"{axis}_max", type=float)
        p.add_argument(f"--{axis}-n", dest=f"{axis}_n", type=int)
    p.add_argument("--slice", choices=("diagonal", "fast", "slow"),
                   help="diagonal: zS=z, zF=ratio*z; fast: zF=z, zS=fixed; slow: zS=z, zF=fixed")
    p.add_argument("--fixed", type=float)
    p.add_argument("--ratio", type=float)
    p.add_argument("--output", type=Path)

    for noun in ("methods", "problems"):
        p = sub.add_parser(noun, help=f"registered {noun}")
        p.add_argument("action", choices=("list",))
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS.get(args.command, {}))
    path = getattr(args, "config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "param") or value is None:
            continue
        cfg[key] = value
    if getattr(args, "param", None):
        cfg["params"] = {**cfg.get("params", {}), **dict(args.param)}
    return cfg


def _method(cfg: dict):
    name = cfg.get("method")
    if not name:
        raise UsageError("a method name is required")
    try:
        return build_method(name, **{k: cfg[k] for k in METHOD_KEYS if k in cfg})
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    except (TableauError, ValueError) as exc:
        raise UsageError(f"invalid parameters for {name}: {exc}") from exc


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def cmd_check(cfg: dict, out) -> int:
    mrm = _method(cfg)
    order, mode = int(cfg["order"]), cfg["mode"]
    if order not in (1, 2, 3, 4):
        raise UsageError("order must be between 1 and 4")
    if mode == "row" and order == 4:
        raise UsageError("order-4 ROW coupling conditions are not available")
    checker = check_spc if mrm.flavor == "spc" else check_mr_order
    report = checker(mrm, order, mode)
    out.write(report.render(cfg["format"]))
    return EXIT_OK if report.achieved_order >= order else EXIT_UNMET


def _problem(cfg: dict):
    try:
        prob = build_problem(cfg["problem"], **cfg.get("params", {}))
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    except TypeError as exc:
        raise UsageError(f"bad problem parameters: {exc}") from exc
    if cfg["jac_mode"] != prob.jac_mode:
        prob = dataclasses.replace(prob, jac_mode=cfg["jac_mode"])
    return prob


def _save_convergence_figure(table, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for errors, label in ((table.err_slow, "slow"), (table.err_fast, "fast")):
        ax.loglog(table.step_sizes, errors, "o-", label=label)
    ax.set_xlabel("H")
    ax.set_ylabel("error at final time")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_converge(cfg: dict, out) -> int:
    mrm = _method(cfg)
    prob = _problem(cfg)
    count = int(cfg["halvings"])
    if count < MIN_STEP_SIZES:
        raise UsageError(f"at least {MIN_STEP_SIZES} step sizes are needed for order estimates")
    H0 = float(cfg["H0"])
    if not H0 > 0.0:
        raise UsageError("H0 must be positive")
    t0, tend = prob.t_span
    if abs((tend - t0) / H0 - round((tend - t0) / H0)) > 1e-9:
        raise UsageError(f"H0 = {H0} does not divide the interval {prob.t_span}")
    table = convergence_study(mrm, prob, H0, count)
    output = cfg.get("output")
    if output is not None:
        output = Path(output)
        table.write_csv(output)
        _save_convergence_figure(table, output.with_suffix(".png"), f"{cfg['method']} on {cfg['problem']}")
    else:
        out.write(",".join(CSV_HEADER) + "\n")
        for row in table.rows():
            out.write(",".join(_fmt(v) for v in row) + "\n")
    for H, message in table.failures.items():
        print(f"H = {_fmt(H)} failed: {message}", file=sys.stderr)
    return EXIT_UNMET if table.all_failed else EXIT_OK


def _save_stability_figure(scan, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    if scan.re.size > 1 and scan.im.size > 1:
        with np.errstate(divide="ignore"):
            field = np.log10(scan.abs_R)
        mesh = ax.pcolormesh(scan.re, scan.im, np.clip(field, -3, 3), shading="auto", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label="log10 |R|")
        if np.nanmin(scan.abs_R) < 1.0 < np.nanmax(scan.abs_R):
            ax.contour(scan.re, scan.im, scan.abs_R, levels=[1.0], colors="w")
    else:
        ax.plot(scan.re if scan.re.size > 1 else scan.im, scan.abs_R.ravel(), "o-")
        ax.set_ylabel("|R|")
    ax.set_xlabel("Re z")
    if scan.re.size > 1 and scan.im.size > 1:
        ax.set_ylabel("Im z")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _axis(cfg: dict, axis: str) -> np.ndarray:
    n = int(cfg[f"{axis}_n"])
    lo, hi = float(cfg[f"{axis}_min"]), float(cfg[f"{axis}_max"])
    if n < 1 or not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise UsageError(f"invalid {axis} grid ({lo}, {hi}, {n})")
    return np.array([lo]) if n == 1 else np.linspace(lo, hi, n)


def cmd_stability(cfg: dict, out) -> int:
    mrm = _method(cfg)
    scan_slice = ScanSlice.named(cfg["slice"], float(cfg["fixed"]), float(cfg["ratio"]))
    scan = stability_scan(mrm, _axis(cfg, "re"), _axis(cfg, "im"), scan_slice)
    output = cfg.get("output")
    if output is not None:
        output = Path(output)
        scan.write_csv(output)
        _save_stability_figure(scan, output.with_suffix(".png"), f"{cfg['method']}, {cfg['slice']} slice")
    else:
        out.write("re_z,im_z,abs_R\n")
        for row in scan.rows():
            out.write(",".join(_fmt(v) for v in row) + "\n")
    return EXIT_OK


def cmd_list(command: str, out) -> int:
    if command == "methods":
        for name, entry in sorted(REGISTRY.items()):
            params = ", ".join(entry.params) or "-"
            out.write(f"{name:18s} order {entry.order} ({entry.mode})  params: {params:18s} {entry.summary}\n")
    else:
        for name, entry in sorted(PROBLEMS.items()):
            out.write(f"{name:12s} {entry.summary}\n")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "converge": cmd_converge, "stability": cmd_stability}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    out = sys.stdout
    try:
        if args.command in ("methods", "problems"):
            return cmd_list(args.command, out)
        return COMMANDS[args.command](resolve_config(args), out)
    except UsageError as exc:
        print(f"mrgark {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
