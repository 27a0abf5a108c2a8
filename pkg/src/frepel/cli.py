"""Command-line workbench: ``frepel <command> [options]``.

Data commands write CSV tables, JSON reports, SVG figures and a
``manifest.json`` into the output directory (``--out``, else
``$FREPEL_OUT_DIR``, else ``./frepel-out``).  Option precedence is
flags > ``--config`` JSON file > built-in defaults, and the resolved values
are echoed into the manifest.  ``frepel replay manifest.json`` reruns a
manifest and compares data-file digests.

Exit codes: 0 ok, 2 usage, 3 numerical, 4 io.  Failures print a JSON object
``{"code", "message", "context"}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__, flory, lab, plots
from .energy import local_time
from .errors import DomainError, NumericalError
from .fbm import (PathBundle, RngStream, TimeGrid, check_hurst, circulant_eigenvalues,
                  embedding_error_bound, sample_paths_cholesky, sample_paths_circulant)
from .gibbs import METHODS, PRIOR_IMPORTANCE, SamplerConfig

log = logging.getLogger("frepel")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
DEFAULT_OUT = "frepel-out"

CSV_SCHEMAS = {
    "sweep": ["N", "r2", "r2_stderr", "ess", "quality"],
    "eps_scan": ["epsilon", "Z", "Z_stderr", "r2", "r2_stderr"],
    "slab": ["D", "r2_D", "stderr", "survivor_fraction"],
    "regime_map": ["hurst", "dim", "nu", "nu_clipped", "labels"],
}

SAMPLER_DEFAULTS = {
    "method": PRIOR_IMPORTANCE,
    "g": 0.0,
    "epsilon": None,
    "eps_scale": 1.0,
    "include_diagonal": False,
    "replicas": 20000,
    "chains": 32,
    "mcmc_steps": 12000,
    "burn_in": 4000,
    "block_size": None,
    "proposal_size": 1,
    "proposal_rho": 0.0,
    "sampler": "cholesky",
    "jitter": False,
    "clamp_eigenvalues": False,
    "ess_floor": 50.0,
}

COMMAND_DEFAULTS = {
    "predict": {},
    "regime-map": {"h_min": 0.05, "h_max": 0.95, "h_steps": 19, "d_min": 1, "d_max": 10,
                   "svg": True},
    "simulate": {"N": 1.0, "n_steps": 64, "paths": 1, "path_method": "cholesky"},
    "sweep": {"ladder": "8,16,32,64", "n_steps": 32, "n_steps_policy": "fixed-count",
              "fit_min_horizon": lab.FIT_MIN_HORIZON},
    "invariance": {"N": 1.0, "a": 2.0, "n_steps": 32},
    "slab": {"N": 1.0, "widths": "1e6,4,2,1", "n_steps": 32},
    "eps-scan": {"N": 1.0, "n_steps": 32, "eps_ladder": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise DomainError(f"cannot parse number list {text!r}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects output files of one command invocation inside ``out_dir``."""

    def __init__(self, out_dir: Path, command: str, config: dict):
        self.out_dir = out_dir
        self.command = command
        self.config = config
        self.data_files: list[str] = []
        self.figures: list[str] = []
        self.extra: dict = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = (self.out_dir / name).resolve()
        if self.out_dir.resolve() not in p.parents:
            raise DomainError(f"refusing to write outside the output directory: {name}")
        return p

    def write_csv(self, name: str, header: list[str], rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.data_files.append(name)

    def write_json(self, name: str, payload: dict) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        self.data_files.append(name)

    def figure(self, name: str, render, *args, **kwargs) -> None:
        try:
            render(self.path(name), *args, **kwargs)
        except Exception as exc:  # figures are a convenience; data already written
            log.warning("figure %s not rendered: %s", name, exc)
            return
        self.figures.append(name)

    def manifest(self) -> dict:
        return {
            "tool": "frepel",
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "outputs": {name: _sha256(self.path(name)) for name in self.data_files},
            "figures": list(self.figures),
            **self.extra,
        }

    def finish(self) -> dict:
        m = self.manifest()
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(m, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return m


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _add_sampler_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--g", type=float, help="coupling g >= 0")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--epsilon", type=float, help="fixed mollifier width (default: grid-matched)")
    g.add_argument("--eps-scale", type=float, help="c in epsilon = c * dt^(2H)")
    g.add_argument("--include-diagonal", action="store_const", const=True)
    g.add_argument("--replicas", type=int, help="prior-importance replicas")
    g.add_argument("--chains", type=int, help="Metropolis chains")
    g.add_argument("--mcmc-steps", type=int, help="Metropolis steps per chain")
    g.add_argument("--burn-in", type=int)
    g.add_argument("--block-size", type=int)
    g.add_argument("--proposal-size", type=int, help="noise coordinates redrawn per proposal")
    g.add_argument("--proposal-rho", type=float, help="autoregressive weight of redrawn coordinates")
    g.add_argument("--sampler", choices=("cholesky", "circulant"), help="prior path sampler")
    g.add_argument("--jitter", action="store_const", const=True)
    g.add_argument("--clamp-eigenvalues", action="store_const", const=True)
    g.add_argument("--ess-floor", type=float)


def _add_common(p: argparse.ArgumentParser, needs_seed: bool) -> None:
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help="output directory")
    if needs_seed:
        p.add_argument("--seed", type=int, help="64-bit unsigned master seed (required)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frepel", description="Self-repelling fBm workbench")
    parser.add_argument("--version", action="version", version=f"frepel {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("predict", help="Flory exponent and regime labels at (H, d)")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    _add_common(p, needs_seed=False)

    p = sub.add_parser("regime-map", help="(H, d) grid of exponents and labels, plus the domain plot")
    for name, typ in (("--h-min", float), ("--h-max", float), ("--h-steps", int),
                      ("--d-min", int), ("--d-max", int)):
        p.add_argument(name, type=typ)
    p.add_argument("--no-svg", dest="svg", action="store_const", const=False)
    _add_common(p, needs_seed=False)

    p = sub.add_parser("simulate", help="sample fBm paths and their local times")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--N", type=float, help="horizon")
    p.add_argument("--n-steps", type=int)
    p.add_argument("--paths", type=int, help="number of paths to export")
    p.add_argument("--path-method", choices=("cholesky", "circulant"))
    _add_sampler_options(p)
    _add_common(p, needs_seed=True)

    p = sub.add_parser("sweep", help="<R^2> over an N-ladder and the fitted exponent")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--ladder", help="comma-separated ascending horizons")
    p.add_argument("--n-steps", type=int)
    p.add_argument("--n-steps-policy", choices=("fixed-count", "fixed-dt"))
    p.add_argument("--fit-min-horizon", type=float)
    _add_sampler_options(p)
    _add_common(p, needs_seed=True)

    p = sub.add_parser("invariance", help="Monte Carlo test of Z(g,N) = Z(a^(Hd-2) g, aN)")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--N", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--n-steps", type=int)
    _add_sampler_options(p)
    _add_common(p, needs_seed=True)

    p = sub.add_parser("slab", help="slab-confined <R^2>_D over a descending D ladder")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--N", type=float)
    p.add_argument("--widths", help="comma-separated descending slab widths")
    p.add_argument("--n-steps", type=int)
    _add_sampler_options(p)
    _add_common(p, needs_seed=True)

    p = sub.add_parser("eps-scan", help="Z and <R^2> along a descending epsilon ladder")
    p.add_argument("--hurst", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--N", type=float)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--eps-ladder", help="comma-separated descending widths "
                                        "(default: dt^2H times 4, 2, 1, 1/2, 1/4)")
    _add_sampler_options(p)
    _add_common(p, needs_seed=True)

    p = sub.add_parser("replay", help="rerun a manifest and compare data digests")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory for the rerun")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


_META_KEYS = {"command", "config", "out", "verbose"}


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    merged = dict(COMMAND_DEFAULTS[command])
    if command not in ("predict", "regime-map"):
        merged.update(SAMPLER_DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except OSError:
            raise
        except ValueError as exc:
            raise DomainError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(from_file, dict):
            raise DomainError("config file must hold a JSON object")
        merged.update({k.replace("-", "_"): v for k, v in from_file.items()})
    for key, value in vars(args).items():
        if key in _META_KEYS or value is None:
            continue
        merged[key] = value
    return merged


def _require(cfg: dict, *keys) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _sampler_config(cfg: dict, stream_id=0) -> SamplerConfig:
    return SamplerConfig(
        method=cfg["method"],
        g=float(cfg["g"]),
        epsilon=cfg["epsilon"],
        eps_scale=float(cfg["eps_scale"]),
        diagonal_included=bool(cfg["include_diagonal"]),
        n_replicas=int(cfg["replicas"]),
        n_chains=int(cfg["chains"]),
        n_mcmc_steps=int(cfg["mcmc_steps"]),
        burn_in=int(cfg["burn_in"]),
        block_size=cfg["block_size"],
        proposal_size=int(cfg["proposal_size"]),
        proposal_rho=float(cfg["proposal_rho"]),
        seed=int(cfg["seed"]),
        stream_id=stream_id,
        sampler=cfg["sampler"],
        jitter=bool(cfg["jitter"]),
        clamp_eigenvalues=bool(cfg["clamp_eigenvalues"]),
        ess_floor=float(cfg["ess_floor"]),
    )


def _record_clamp(run: Run, cfg: dict, grids) -> None:
    if cfg.get("sampler") == "circulant" and cfg.get("clamp_eigenvalues"):
        run.extra["embedding_error_bound"] = max(
            embedding_error_bound(circulant_eigenvalues(cfg["hurst"], grid)) for grid in grids
        )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_predict(cfg: dict, out_dir: Path | None) -> dict:
    _require(cfg, "hurst", "dim")
    pred = flory.flory_index(check_hurst(cfg["hurst"]), int(cfg["dim"]))
    payload = pred.to_dict()
    if pred.d >= 1 and pred.h * pred.d != 2:
        payload["recursion"] = flory.recursion_diagnostics(pred.h, pred.d).to_dict()
    return payload


def cmd_regime_map(cfg: dict, run: Run) -> dict:
    n = int(cfg["h_steps"])
    if n < 2:
        raise DomainError("h_steps must be >= 2")
    lo, hi = float(cfg["h_min"]), float(cfg["h_max"])
    hs = [lo + (hi - lo) * i / (n - 1) for i in range(n)]
    ds = list(range(int(cfg["d_min"]), int(cfg["d_max"]) + 1))
    rows = flory.regime_map(hs, ds)
    run.write_csv("regime_map.csv", CSV_SCHEMAS["regime_map"],
                  ([r["hurst"], r["dim"], r["nu"], r["nu_clipped"], ";".join(r["labels"])] for r in rows))
    if cfg.get("svg", True):
        run.figure("regime_map.svg", plots.regime_map_figure, d_max=max(ds) + 0.5)
    return {"rows": len(rows)}


def cmd_simulate(cfg: dict, run: Run) -> dict:
    _require(cfg, "hurst", "dim", "seed")
    h, d = check_hurst(cfg["hurst"]), int(cfg["dim"])
    grid = TimeGrid(int(cfg["n_steps"]), float(cfg["N"]))
    sampler = _sampler_config(cfg)
    rng = RngStream(int(cfg["seed"]), 0)
    count = int(cfg["paths"])
    if cfg["path_method"] == "circulant":
        arr = sample_paths_circulant(h, grid, d, rng, count, bool(cfg["clamp_eigenvalues"]))
    else:
        arr = sample_paths_cholesky(h, grid, d, rng, count, bool(cfg["jitter"]))
    eps = sampler.resolve_epsilon(h, grid)
    energies = []
    header = ["t"] + [f"x_{i + 1}" for i in range(d)]
    for k in range(count):
        path = PathBundle(h, grid, d, arr[k])
        run.write_csv(f"path_{k:04d}.csv", header, path.to_rows())
        rep = local_time(path, eps, sampler.diagonal_included).with_coupling(sampler.g)
        energies.append({"path": k, "local_time": rep.local_time, "energy": rep.energy,
                         "r2": path.end_to_end_squared})
    run.write_json("energy.json", {"epsilon": eps, "diagonal_included": sampler.diagonal_included,
                                   "g": sampler.g, "paths": energies})
    if cfg["path_method"] == "circulant":
        _record_clamp(run, cfg, [grid])
    return {"paths": count, "epsilon": eps}


def cmd_sweep(cfg: dict, run: Run) -> dict:
    _require(cfg, "hurst", "dim", "seed")
    plan = lab.ExperimentPlan(
        h=check_hurst(cfg["hurst"]), d=int(cfg["dim"]), ladder=tuple(_float_list(cfg["ladder"])),
        config=_sampler_config(cfg), n_steps=int(cfg["n_steps"]),
        n_steps_policy=cfg["n_steps_policy"], fit_min_horizon=cfg["fit_min_horizon"],
    )
    sweep = lab.run_r2_sweep(plan)
    run.write_csv("sweep.csv", CSV_SCHEMAS["sweep"],
                  ([n, e.value, e.std_error, e.ess, e.quality] for n, e, _, _ in sweep.points))
    fit = lab.fit_exponent(sweep)
    payload = fit.to_dict()
    payload["hurst"] = plan.h
    payload["dim"] = plan.d
    payload["g"] = plan.config.g
    payload["quality"] = "flagged" if sweep.partial else "ok"
    payload["points"] = [{"N": n, "epsilon": eps, "n_steps": ns, **e.to_dict()}
                         for n, e, eps, ns in sweep.points]
    run.write_json("fit.json", payload)
    run.figure("sweep.svg", plots.sweep_figure, list(sweep.horizons),
               [e.value for e in sweep.estimates], [e.std_error for e in sweep.estimates],
               fit, plan.h)
    _record_clamp(run, cfg, [plan.grid_for(n) for n in plan.ladder])
    return {"nu": fit.nu, "nu_std_error": fit.nu_std_error, "quality": payload["quality"]}


def cmd_invariance(cfg: dict, run: Run) -> dict:
    _require(cfg, "hurst", "dim", "seed")
    sampler = _sampler_config(cfg)
    report = lab.test_scale_invariance(check_hurst(cfg["hurst"]), int(cfg["dim"]), sampler.g,
                                       float(cfg["N"]), float(cfg["a"]), sampler,
                                       n_steps=int(cfg["n_steps"]))
    payload = report.to_dict()
    run.write_json("invariance.json", payload)
    return {"z_score": report.z_score, "quality": payload["quality"]}


def cmd_slab(cfg: dict, run: Run) -> dict:
    _require(cfg, "hurst", "dim", "seed")
    sampler = _sampler_config(cfg)
    res = lab.slab_reduction_experiment(check_hurst(cfg["hurst"]), int(cfg["dim"]), sampler.g,
                                        float(cfg["N"]), _float_list(cfg["widths"]), sampler,
                                        n_steps=int(cfg["n_steps"]))
    nan = float("nan")
    rows = []
    for r in res.rungs:
        est = r.estimate
        frac = r.survivor_fraction if r.survivor_fraction is not None else nan
        rows.append([r.width, est.value if est else nan, est.std_error if est else nan, frac])
    run.write_csv("slab.csv", CSV_SCHEMAS["slab"], rows)
    payload = res.to_dict()
    flagged = not res.unconstrained.reliable or any(r.estimate and not r.estimate.reliable
                                                    for r in res.rungs)
    payload["quality"] = "flagged" if flagged else "ok"
    run.write_json("slab_fit.json", payload)
    kept = [r for r in res.rungs if not r.dropped]
    if kept:
        run.figure("slab.svg", plots.slab_figure, [r.width for r in kept], [r.ratio for r in kept],
                   [r.ratio_std_error for r in kept], res.unconstrained.value,
                   res.fitted_y, res.predicted_y)
    return {"fitted_y": res.fitted_y, "predicted_y": res.predicted_y, "quality": payload["quality"]}


def cmd_eps_scan(cfg: dict, run: Run) -> dict:
    _require(cfg, "hurst", "dim", "seed")
    h, d = check_hurst(cfg["hurst"]), int(cfg["dim"])
    grid = TimeGrid(int(cfg["n_steps"]), float(cfg["N"]))
    sampler = _sampler_config(cfg)
    if cfg.get("eps_ladder"):
        ladder = _float_list(cfg["eps_ladder"])
    else:
        base = grid.dt ** (2 * h)
        ladder = [base * f for f in (4.0, 2.0, 1.0, 0.5, 0.25)]
    points = lab.epsilon_stability_scan(h, d, sampler.g, grid, ladder, sampler)
    run.write_csv("eps_scan.csv", CSV_SCHEMAS["eps_scan"],
                  ([p.epsilon, p.partition.value, p.partition.std_error, p.r2.value, p.r2.std_error]
                   for p in points))
    run.figure("eps_scan.svg", plots.eps_scan_figure, [p.epsilon for p in points],
               [p.partition.value for p in points], [p.partition.std_error for p in points],
               [p.r2.value for p in points], [p.r2.std_error for p in points])
    flagged = any(not (p.partition.reliable and p.r2.reliable) for p in points)
    return {"rungs": len(points), "quality": "flagged" if flagged else "ok"}


DATA_COMMANDS = {
    "regime-map": cmd_regime_map,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "invariance": cmd_invariance,
    "slab": cmd_slab,
    "eps-scan": cmd_eps_scan,
}


def _out_dir(explicit: str | None) -> Path:
    return Path(explicit or os.environ.get("FREPEL_OUT_DIR") or DEFAULT_OUT)


def execute(command: str, cfg: dict, out_dir: Path) -> dict:
    """Run a data command with a resolved config; returns the manifest."""
    if cfg.get("seed") is not None and not 0 <= int(cfg["seed"]) < 2**64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    run = Run(out_dir, command, cfg)
    summary = DATA_COMMANDS[command](cfg, run)
    manifest = run.finish()
    manifest["summary"] = summary
    return manifest


def replay(manifest_path: str, out_dir: Path) -> dict:
    with open(manifest_path) as fh:
        recorded = json.load(fh)
    command = recorded.get("command")
    if command not in DATA_COMMANDS:
        raise DomainError(f"manifest names unknown command {command!r}")
    fresh = execute(command, recorded["config"], out_dir)
    mismatches = sorted(
        name for name in set(recorded["outputs"]) | set(fresh["outputs"])
        if recorded["outputs"].get(name) != fresh["outputs"].get(name)
    )
    return {"identical": not mismatches, "mismatches": mismatches, "out": str(out_dir)}


def _error(code: str, message: str, context: dict | None = None) -> None:
    print(json.dumps({"code": code, "message": message, "context": context or {}}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required; see frepel --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "replay":
            result = replay(args.manifest, _out_dir(args.out))
            print(json.dumps(result, indent=2))
            return EXIT_OK if result["identical"] else EXIT_NUMERICAL
        cfg = resolve_config(args.command, args)
        if args.command == "predict":
            payload = cmd_predict(cfg, None)
            print(json.dumps(payload, indent=2, sort_keys=True))
            if args.out:
                out = _out_dir(args.out)
                out.mkdir(parents=True, exist_ok=True)
                with open(out / "predict.json", "w") as fh:
                    json.dump(payload, fh, indent=2, sort_keys=True)
                    fh.write("\n")
            return EXIT_OK
        manifest = execute(args.command, cfg, _out_dir(args.out))
        print(json.dumps({"out": str(_out_dir(args.out)), "summary": manifest["summary"],
                          "outputs": sorted(manifest["outputs"])}, indent=2, default=_fmt))
        return EXIT_OK
    except UsageError as exc:
        _error("usage", str(exc))
        return EXIT_USAGE
    except DomainError as exc:
        _error("usage", str(exc), {"type": type(exc).__name__})
        return EXIT_USAGE
    except NumericalError as exc:
        ctx = {"type": type(exc).__name__}
        for attr in ("minor", "min_eigenvalue"):
            if hasattr(exc, attr):
                ctx[attr] = getattr(exc, attr)
        _error("numerical", str(exc), ctx)
        return EXIT_NUMERICAL
    except OSError as exc:
        _error("io", str(exc), {"filename": getattr(exc, "filename", None)})
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
