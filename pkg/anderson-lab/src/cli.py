"""
Command-line entry point.

Every subcommand writes its outputs into ``<output_dir>/<run_id>/`` and saves
an experiment manifest next to them, so any run can be replayed with
``replay --manifest``. Exit codes: 0 success, 1 usage or input error, 2 a
numerical verification did not hold.
"""

import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import click
import numpy as np
from pythonjsonlogger.json import JsonFormatter

from bounds_oracles import constants_report, eigen_tail_bound, h_d
from cloud_geometry import component_diameters, components, covering_number, diameter_bound_holds, gamma
from errors import LabError, VerificationFailure
from excursions import contracting_gamma, excursion_histogram, verify_path_expansion
from feynman_kac import CalibratedConstants, PathConfig, calibrate_constants, simulate_fk, simulate_stopped_fk
from hardy import (f_eta_sup, hardy_rayleigh, hardy_threshold, key_lower_bound_constants, multipolar_check,
                   partition_of_unity_check, partition_samples, random_multipolar_cloud, single_pole_criticality)
from kernels import capped_potential, parse_kernel, potential_eval
from lab_config import ConfigManager, LabConfig
from manifest_storage import ExperimentManifest, ManifestStorage, compare_digests, load_manifest
from point_process import (BoundParams, PointCloud, RegionDescriptor, default_sweep, read_cloud, sample_ppp,
                           verify_bound, write_cloud)
from spectral import build_operator, fill_component_eigenvalues, grid_cap, lambda_max
from suite import SuiteRunner
from utils import format_float, json_encoder, parse_options, parse_vector

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION = 0, 1, 2


def configure_logging(level: str = "INFO", fmt: str = "text") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)
    if fmt == "json":
        for handler in logging.getLogger().handlers:
            handler.setFormatter(JsonFormatter(LOG_FORMAT))


@dataclass
class CommandOutcome:
    outputs: List[str]
    ok: bool = True
    summary: Dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    constants: Dict = field(default_factory=dict)


Runner = Callable[[LabConfig, Dict, str], CommandOutcome]
RUNNERS: Dict[str, Runner] = {}


def runner(name: str):
    def register(fn: Runner) -> Runner:
        RUNNERS[name] = fn
        return fn
    return register


def _write_json(run_dir: str, name: str, data: Dict) -> str:
    path = os.path.join(run_dir, name)
    with open(path, "w") as f:
        f.write(json_encoder(data))
    return path


def _write_csv(run_dir: str, name: str, rows: List[Dict]) -> str:
    path = os.path.join(run_dir, name)
    with open(path, "w", newline="") as f:
        if rows:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: format_float(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def _cloud(path: Optional[str], dim: int = 3) -> PointCloud:
    return read_cloud(path) if path else PointCloud.empty(dim)


def _region(text: str, dim: int, center: Optional[str] = None) -> RegionDescriptor:
    return RegionDescriptor.parse(text, dim, parse_vector(center) if center else None)


def _constants(path: Optional[str], d: int) -> CalibratedConstants:
    if not path:
        return CalibratedConstants.analytic(d)
    with open(path, "r") as f:
        return CalibratedConstants.from_dict(json.load(f))


def execute(storage: ManifestStorage, config: LabConfig, command: str, params: Dict) -> ExperimentManifest:
    """Run a registered command into a fresh run directory and persist its manifest."""
    run_id = storage.new_run_id()
    run_dir = storage.run_dir(run_id)
    start = time.perf_counter()
    outcome = RUNNERS[command](config, params, run_dir)
    manifest = ExperimentManifest(command, dict(params), outcome.seeds, outcome.constants)
    manifest.record_outputs(outcome.outputs)
    manifest.wall_clock = time.perf_counter() - start
    manifest.exit_code = EXIT_OK if outcome.ok else EXIT_VERIFICATION
    storage.save_manifest(manifest, run_id)
    click.echo(json_encoder({"run_id": run_id, "run_dir": run_dir, "ok": outcome.ok, "summary": outcome.summary}))
    return manifest


def _dispatch(ctx: click.Context, command: str, params: Dict) -> int:
    state = ctx.obj
    try:
        return execute(state["storage"], state["config"], command, params).exit_code
    except VerificationFailure as e:
        logger.error(f"Verification failed in {command}: {str(e)}")
        return EXIT_VERIFICATION
    except (LabError, ValueError, OSError) as e:
        logger.error(f"Error running {command}: {str(e)}")
        click.echo(f"Error: {str(e)}", err=True)
        return EXIT_USAGE


class LabGroup(click.Group):
    """Maps click usage errors to exit code 1 and returns the command's exit code."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            rv = EXIT_USAGE
        except click.ClickException as e:
            e.show()
            rv = EXIT_USAGE
        code = rv if isinstance(rv, int) else EXIT_OK
        if standalone_mode:
            sys.exit(code)
        return code


@click.group(cls=LabGroup)
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None, help="Flat key=value config file.")
@click.option("--output-dir", default=None, help="Directory for run outputs and manifests.")
@click.option("--threads", type=int, default=None, help="Worker threads for parallel sweeps (default LAB_THREADS).")
@click.option("--log-level", default=None, help="Logging level.")
@click.option("--log-format", type=click.Choice(["text", "json"]), default=None)
@click.pass_context
def cli(ctx, config_file, output_dir, threads, log_level, log_format):
    """Numerical lab for the parabolic Anderson model with inverse-square Poisson potentials."""
    overrides = {"output_dir": output_dir, "threads": threads, "log_level": log_level, "log_format": log_format}
    try:
        config = ConfigManager().resolve(config_file, overrides)
    except LabError as e:
        raise click.UsageError(str(e))
    configure_logging(config.log_level, config.log_format)
    ctx.obj = {"config": config, "storage": ManifestStorage(config.output_dir)}


# ---------------------------------------------------------------- point process


@runner("ppp-sample")
def run_ppp_sample(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    region = _region(p["region"], p["dim"], p.get("center"))
    cloud = sample_ppp(region, p["intensity"], p["seed"])
    path = p.get("out") or os.path.join(run_dir, "cloud.csv")
    write_cloud(cloud, path)
    return CommandOutcome([path], True, {"points": len(cloud), "path": path, "region": region.to_dict()},
                          [p["seed"]])


@cli.command("ppp-sample")
@click.option("--dim", type=int, default=3)
@click.option("--region", required=True, help="box:HALF or ball:R")
@click.option("--center", default=None, help="Comma-separated centre (default origin).")
@click.option("--intensity", type=float, default=1.0)
@click.option("--seed", type=int, required=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Cloud CSV path (default: in the run directory).")
@click.pass_context
def ppp_sample(ctx, **params):
    """Sample a homogeneous Poisson point process."""
    return _dispatch(ctx, "ppp-sample", params)


def clamp_for_display(row: Dict, keys=("bound", "stated_bound")) -> Dict:
    """Probability bounds clamped to [0, 1]; the raw values move to ``<key>_raw``."""
    shown = dict(row)
    for key in keys:
        if key in shown:
            shown[f"{key}_raw"] = shown[key]
            shown[key] = min(max(float(shown[key]), 0.0), 1.0)
    return shown


@runner("verify-bounds")
def run_verify_bounds(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    lemma = p["lemma"]
    intensity = p.get("intensity", 1.0)
    if p.get("r") is not None and p.get("k") is not None and p.get("region"):
        region = _region(p["region"], 3)
        if lemma == "nocluster":
            sweep = [BoundParams(lemma, 3, p["r"], p["k"], regions=[(region, p["r"])], intensity=intensity)]
        else:
            sweep = [BoundParams(lemma, 3, p["r"], p["k"], region, intensity=intensity)]
    else:
        sweep = default_sweep(lemma, intensity)
    checks = [verify_bound(params, p["trials"], p["seed"], config.threads) for params in sweep]
    rows = [clamp_for_display(c.to_row()) for c in checks]
    path = _write_csv(run_dir, "bounds.csv", rows)
    ok = all(c.passed for c in checks)
    return CommandOutcome([path], ok, {"checks": len(checks), "violations": sum(not c.passed for c in checks)},
                          [p["seed"]])


@cli.command("verify-bounds")
@click.option("--lemma", type=click.Choice(["chain", "maxcount", "cluster", "nocluster"]), required=True)
@click.option("--trials", type=int, default=1000)
@click.option("--seed", type=int, required=True)
@click.option("--intensity", type=float, default=1.0)
@click.option("--r", type=float, default=None)
@click.option("--k", type=int, default=None)
@click.option("--region", default=None, help="Single region instead of the default sweep.")
@click.pass_context
def verify_bounds(ctx, **params):
    """Monte-Carlo check of the Poisson clustering bounds."""
    return _dispatch(ctx, "verify-bounds", params)


# ---------------------------------------------------------------- potentials


@runner("potential-eval")
def run_potential_eval(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = read_cloud(p["cloud"])
    kernel = parse_kernel(p["kernel"], cloud.dim)
    points = np.array([parse_vector(x) for x in p["at"]])
    values = potential_eval(cloud, kernel, points)
    rows = [{"x": list(x), "value": float(v)} for x, v in zip(points, np.atleast_1d(values))]
    path = _write_json(run_dir, "potential.json", {"kernel": kernel.describe(), "values": rows})
    return CommandOutcome([path], True, {"values": [r["value"] for r in rows]})


@cli.command("potential-eval")
@click.option("--cloud", required=True)
@click.option("--kernel", required=True, help="truncated:a=A | atten:a=A,p=P | renorm:a=A,box=B[,step=H]")
@click.option("--at", multiple=True, required=True, help="Evaluation point, comma separated; repeatable.")
@click.pass_context
def potential_eval_cmd(ctx, **params):
    """Evaluate the cloud potential at points."""
    params["at"] = list(params["at"])
    return _dispatch(ctx, "potential-eval", params)


@runner("potential-grid")
def run_potential_grid(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = read_cloud(p["cloud"])
    kernel = parse_kernel(p["kernel"], cloud.dim)
    h = p.get("h") or config.grid_step
    cap = p.get("cap") or config.cap
    op = build_operator(_region(p["region"], cloud.dim), h)
    nodes = op.interior_points()
    values = capped_potential(cloud, kernel, nodes, cap, pole_radius=h / 2)
    rows = [dict({f"x{i}": float(c) for i, c in enumerate(node)}, value=float(v)) for node, v in zip(nodes, values)]
    path = _write_csv(run_dir, "potential_grid.csv", rows)
    return CommandOutcome([path], True, {"nodes": len(rows), "max": float(values.max()) if len(values) else 0.0})


@cli.command("potential-grid")
@click.option("--cloud", required=True)
@click.option("--kernel", required=True)
@click.option("--region", required=True)
@click.option("--h", type=float, default=None)
@click.option("--cap", type=float, default=None)
@click.pass_context
def potential_grid(ctx, **params):
    """Capped potential on the interior nodes of a grid, as CSV."""
    return _dispatch(ctx, "potential-grid", params)


# ---------------------------------------------------------------- geometry


@runner("geometry")
def run_geometry(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = read_cloud(p["cloud"])
    decomposition = components(cloud, p["r"])
    report = {
        "gamma": gamma(cloud),
        "decomposition": decomposition.to_dict(),
        "diameters": component_diameters(decomposition, cloud),
        "diameter_bound_holds": diameter_bound_holds(decomposition, cloud),
    }
    if p.get("covering"):
        cover = covering_number(_region(p["covering"], cloud.dim), p["r"])
        report["covering"] = {"count": cover.count, "exact": cover.exact}
    path = _write_json(run_dir, "geometry.json", report)
    return CommandOutcome([path], report["diameter_bound_holds"],
                          {"gamma": report["gamma"], "N_r": decomposition.N_r,
                           "components": len(decomposition.components)})


@cli.command("geometry")
@click.option("--cloud", required=True)
@click.option("--r", type=float, required=True)
@click.option("--covering", default=None, help="Region whose r-box covering number to report.")
@click.pass_context
def geometry(ctx, **params):
    """Connectivity radius and r-components of a cloud."""
    return _dispatch(ctx, "geometry", params)


# ---------------------------------------------------------------- spectral


@runner("eigen")
def run_eigen(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = _cloud(p.get("cloud"), p["dim"])
    kernel = parse_kernel(p["kernel"], cloud.dim)
    h = p.get("h") or config.grid_step
    cap = p.get("cap") or grid_cap(h)
    domain_text = p["domain"]
    if domain_text == "components":
        if p.get("r") is None:
            raise LabError("--r is required with --domain components")
        decomposition = components(cloud, p["r"])
        Lambda = fill_component_eigenvalues(decomposition, cloud, kernel, p["theta"], h, cap, config.tol)
        report = {"Lambda": Lambda, "decomposition": decomposition.to_dict()}
        summary = {"Lambda": Lambda, "N_r": decomposition.N_r}
    else:
        if domain_text.startswith("component:"):
            index, r = _component_domain(domain_text)
            decomposition = components(cloud, r)
            if not 0 <= index < len(decomposition.components):
                raise LabError(f"Component {index} out of range: {len(decomposition.components)} components at r={r}")
            domain = decomposition.domain(index, cloud)
            cloud = cloud.subset(decomposition.components[index].member_indices)
        else:
            domain = _region(domain_text, cloud.dim)
        result = lambda_max(domain, cloud, kernel, p["theta"], h, cap, config.tol)
        report = result.to_dict()
        summary = {"lambda": result.lambda_, "residual": result.residual, "iterations": result.iterations,
                   "converged": result.converged}
    report.update({"h": h, "cap": cap, "theta": p["theta"], "kernel": kernel.describe(), "domain": domain_text})
    path = _write_json(run_dir, "eigen.json", report)
    return CommandOutcome([path], True, summary)


def _component_domain(text: str):
    """Parse ``component:I,r=R`` into (I, R)."""
    index_text, _, rest = text[len("component:"):].partition(",")
    try:
        return int(index_text), float(parse_options(rest)["r"])
    except (KeyError, ValueError):
        raise LabError(f"Domain must look like component:I,r=R, got '{text}'")


@cli.command("eigen")
@click.option("--cloud", default=None, help="Cloud CSV (default: empty cloud).")
@click.option("--dim", type=int, default=3)
@click.option("--kernel", default="truncated:a=1")
@click.option("--theta", type=float, required=True)
@click.option("--domain", default="ball:1", help="box:HALF, ball:R, component:I,r=R or 'components'.")
@click.option("--r", type=float, default=None, help="Component radius for --domain components.")
@click.option("--h", type=float, default=None)
@click.option("--cap", type=float, default=None, help="Potential cap (default 4/h^2).")
@click.pass_context
def eigen(ctx, **params):
    """Principal Dirichlet eigenvalue of 1/2 Laplacian + theta min(V, cap)."""
    return _dispatch(ctx, "eigen", params)


HARDY_MODES = ["single", "multipolar", "feta", "partition", "rayleigh", "key-bound"]


@runner("hardy-verify")
def run_hardy_verify(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    mode = p["mode"]
    h = p.get("h") or config.grid_step
    if mode == "multipolar":
        rows = []
        for M in (2, 3):
            for i in range(p["count"]):
                cloud, theta = random_multipolar_cloud(M, 3, p["seed"], 1000 * M + i)
                rows.append(dict(multipolar_check(cloud, theta, h, tol=config.tol).to_row(), M=M))
    elif mode == "feta":
        rows = [f_eta_sup(N, p["grid"]).to_row() for N in range(1, p["n_max"] + 1)]
    elif mode == "single":
        rows = []
        for factor in (1.0, 1.5):
            report = single_pole_criticality(factor * h_d(3), [1e3, 1e4])
            critical = factor == 1.0
            rows.append({"theta": report.theta, "relative_change": report.relative_change,
                         "pass": report.relative_change < 0.05 if critical else report.relative_change > 0.5})
    elif mode == "partition":
        rows = []
        for i in range(p["count"]):
            cloud, _ = random_multipolar_cloud(3, 3, p["seed"], i)
            r = 0.9 * gamma(cloud)
            rows.append(partition_of_unity_check(cloud, r, partition_samples(cloud, r, 2000, p["seed"] + i)).to_row())
    elif mode == "rayleigh":
        threshold = hardy_threshold(p["eps"], 3)
        rayleigh = hardy_rayleigh(threshold.n0, threshold.K_star, p["eps"], 3)
        rows = [dict(rayleigh.to_dict(), n0=threshold.n0, K_star=threshold.K_star, **{"pass": rayleigh.ratio > 1})]
    else:
        result = key_lower_bound_constants(3, 2, h_d(3))
        rows = [dict(result.to_dict(), **{"pass": result.c2 > 0})]
    path = _write_csv(run_dir, f"hardy_{mode}.csv", rows)
    ok = all(r.get("pass", True) for r in rows)
    return CommandOutcome([path], ok, {"mode": mode, "rows": len(rows), "failures": sum(not r["pass"] for r in rows)},
                          [p["seed"]])


@cli.command("hardy-verify")
@click.option("--mode", type=click.Choice(HARDY_MODES), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--count", type=int, default=5)
@click.option("--h", type=float, default=0.125)
@click.option("--grid", type=int, default=50)
@click.option("--n-max", type=int, default=3)
@click.option("--eps", type=float, default=1.0 / 16)
@click.pass_context
def hardy_verify(ctx, **params):
    """Hardy-type inequalities and their ingredients."""
    return _dispatch(ctx, "hardy-verify", params)


# ---------------------------------------------------------------- Feynman-Kac


def _path_config(config: LabConfig, p: Dict) -> PathConfig:
    """Path settings from the config, with per-command --paths, --dt and --cap on top."""
    cfg = config.path_config(p.get("n_paths"), p["seed"])
    if p.get("dt"):
        cfg = replace(cfg, dt=p["dt"])
    if p.get("cap"):
        cfg = replace(cfg, cap=p["cap"])
    return cfg


def _stopping(text: str, dim: int):
    """Parse ``gamma=G,domain=REGION`` into (G, region)."""
    options = parse_options(text)
    missing = sorted({"gamma", "domain"} - set(options))
    if missing:
        raise LabError(f"--stopped needs gamma=G,domain=REGION; missing {', '.join(missing)}")
    return float(options["gamma"]), _region(options["domain"], dim)


@runner("fk")
def run_fk(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = _cloud(p.get("cloud"), p["dim"])
    kernel = parse_kernel(p["kernel"], cloud.dim)
    cfg = _path_config(config, p)
    x = parse_vector(p["x"])
    if p.get("stopped"):
        if p.get("confine"):
            raise LabError("--stopped and --confine are exclusive")
        gamma_, domain = _stopping(p["stopped"], cloud.dim)
        estimate = simulate_stopped_fk(cloud, kernel, p["theta"], gamma_, domain, x, cfg, n_jobs=config.threads)
    else:
        confinement = _region(p["confine"], cloud.dim) if p.get("confine") else None
        estimate = simulate_fk(cloud, kernel, p["theta"], p["t"], x, cfg, confinement, gamma=p["gamma"],
                               n_jobs=config.threads)
    path = _write_json(run_dir, "fk.json", dict(estimate.to_dict(), path_config=cfg.to_dict()))
    return CommandOutcome([path], True, {"mean": estimate.mean, "stderr": estimate.stderr}, [p["seed"]])


@cli.command("fk")
@click.option("--cloud", default=None)
@click.option("--dim", type=int, default=3)
@click.option("--kernel", default="truncated:a=1")
@click.option("--theta", type=float, required=True)
@click.option("--t", type=float, default=1.0)
@click.option("--x", default="0,0,0")
@click.option("--seed", type=int, required=True)
@click.option("--paths", "n_paths", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--cap", type=float, default=None)
@click.option("--confine", default=None, help="Kill paths on leaving this region (box:HALF or ball:R).")
@click.option("--stopped", default=None, help="gamma=G,domain=REGION: integrate up to the exit time instead of t.")
@click.option("--gamma", type=float, default=0.0, help="Discount rate for the fixed-time functional.")
@click.pass_context
def fk(ctx, **params):
    """Monte-Carlo Feynman-Kac functional."""
    return _dispatch(ctx, "fk", params)


@runner("excursions")
def run_excursions(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = read_cloud(p["cloud"])
    cfg = _path_config(config, p)
    histogram = excursion_histogram(cloud, p["a"], p["r"], p["theta"], p["gamma"], p["t"], parse_vector(p["x"]), cfg,
                                    config.threads)
    rows = [{"E_t": n, "paths": histogram.counts[n], "mass": histogram.mass[n], "log_scale": histogram.log_scale}
            for n in sorted(histogram.counts)]
    path = _write_csv(run_dir, "excursions.csv", rows)
    return CommandOutcome([path], True, {"counts": histogram.counts, "max_ratio": histogram.max_ratio(),
                                         "log_scale": histogram.log_scale}, [p["seed"]])


@cli.command("excursions")
@click.option("--cloud", required=True)
@click.option("--a", type=float, required=True)
@click.option("--r", type=float, required=True)
@click.option("--theta", type=float, required=True)
@click.option("--gamma", type=float, default=0.0)
@click.option("--t", type=float, default=1.0)
@click.option("--x", required=True)
@click.option("--seed", type=int, required=True)
@click.option("--paths", "n_paths", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.pass_context
def excursions(ctx, **params):
    """Histogram of the excursion count E_t, as CSV."""
    return _dispatch(ctx, "excursions", params)


@runner("path-expansion")
def run_path_expansion(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    cloud = read_cloud(p["cloud"])
    constants = _constants(p.get("constants"), cloud.dim)
    h = p.get("h") or p["r"] / 12
    if p.get("gamma") is None:
        gamma_, Lambda = contracting_gamma(cloud, p["theta"], p["a"], p["r"], constants, h)
    else:
        gamma_, Lambda = p["gamma"], None
    cfg = _path_config(config, p)
    verdict = verify_path_expansion(cloud, p["theta"], p["a"], p["r"], gamma_, p["t"], cfg, p["n_starts"], constants,
                                    h, Lambda, config.threads)
    path = _write_json(run_dir, "path_expansion.json", verdict.to_dict())
    return CommandOutcome([path], verdict.holds, {"L": verdict.constants.L, "rho": verdict.constants.rho,
                                                  "gamma": gamma_, "verified": verdict.holds},
                          [p["seed"]], constants.to_dict())


@cli.command("path-expansion")
@click.option("--cloud", required=True)
@click.option("--theta", type=float, required=True)
@click.option("--a", type=float, required=True)
@click.option("--r", type=float, required=True)
@click.option("--gamma", type=float, default=None, help="Default: smallest contracting gamma.")
@click.option("--t", type=float, default=0.05)
@click.option("--h", type=float, default=None)
@click.option("--seed", type=int, required=True)
@click.option("--paths", "n_paths", type=int, default=None)
@click.option("--n-starts", type=int, default=8)
@click.option("--constants", default=None, help="JSON file written by 'calibrate'.")
@click.pass_context
def path_expansion(ctx, **params):
    """Check the path-expansion bounds outside B_r(cloud)."""
    return _dispatch(ctx, "path-expansion", params)


# ---------------------------------------------------------------- constants and harness


@runner("constants")
def run_constants(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    report = constants_report(p["d"], p["theta"], p.get("t"), p["c"])
    if p.get("R") is not None and p.get("r") is not None and p.get("s") is not None:
        tail = eigen_tail_bound(p["R"], p["r"], p["s"], p["theta"], p["d"])
        report["tail_bound"] = tail.__dict__
    path = _write_json(run_dir, "constants.json", report)
    return CommandOutcome([path], True, report)


@cli.command("constants")
@click.option("--d", type=int, required=True)
@click.option("--theta", type=float, required=True)
@click.option("--t", type=float, default=None)
@click.option("--c", type=float, default=1.0)
@click.option("--R", "R", type=float, default=None)
@click.option("--r", type=float, default=None)
@click.option("--s", type=float, default=None)
@click.pass_context
def constants(ctx, **params):
    """Closed-form constants for (d, theta)."""
    return _dispatch(ctx, "constants", params)


@runner("calibrate")
def run_calibrate(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    calibrated = calibrate_constants(p["d"], p["seed"], p["n_paths"], include_k1=not p["skip_k1"])
    path = _write_json(run_dir, "constants.json", calibrated.to_dict())
    return CommandOutcome([path], True, calibrated.to_dict(), [p["seed"]], calibrated.to_dict())


@cli.command("calibrate")
@click.option("--d", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--paths", "n_paths", type=int, default=20000)
@click.option("--skip-k1", is_flag=True)
@click.pass_context
def calibrate(ctx, **params):
    """Monte-Carlo calibration of K_*, c_* and K_1."""
    return _dispatch(ctx, "calibrate", params)


@runner("suite")
def run_suite(config: LabConfig, p: Dict, run_dir: str) -> CommandOutcome:
    report = SuiteRunner().run(p["profile"], p["seed"], config.threads, p.get("only") or None)
    json_path = os.path.join(run_dir, "suite.json")
    csv_path = os.path.join(run_dir, "suite.csv")
    report.write(json_path, csv_path)
    return CommandOutcome([json_path, csv_path], report.ok, {"counts": report.counts, "pass_rate": report.pass_rate},
                          [p["seed"]])


@cli.command("suite")
@click.option("--profile", type=click.Choice(["quick", "full"]), default="quick")
@click.option("--seed", type=int, required=True)
@click.option("--only", multiple=True, help="Run only the named checks; repeatable.")
@click.pass_context
def suite(ctx, **params):
    """Run the acceptance battery."""
    params["only"] = list(params["only"])
    return _dispatch(ctx, "suite", params)


@cli.command("replay")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def replay(ctx, manifest_path):
    """Re-run a command from its manifest and compare output digests."""
    state = ctx.obj
    try:
        original = load_manifest(manifest_path)
        if original.command not in RUNNERS:
            raise LabError(f"Manifest names unknown command '{original.command}'")
        rerun = execute(state["storage"], state["config"], original.command, original.parameters)
    except (LabError, ValueError, OSError) as e:
        logger.error(f"Error replaying {manifest_path}: {str(e)}")
        click.echo(f"Error: {str(e)}", err=True)
        return EXIT_USAGE
    mismatched = compare_digests(original.outputs, rerun.outputs)
    click.echo(json_encoder({"replayed": original.command, "identical": not mismatched, "mismatched": mismatched}))
    return EXIT_VERIFICATION if mismatched else rerun.exit_code


@cli.group("runs")
def runs():
    """Browse and prune stored runs."""


@runs.command("list")
@click.option("--command", "command_name", default=None, help="Only runs of this subcommand.")
@click.option("--sort-by", type=click.Choice(["timestamp", "command", "exit_code"]), default="timestamp")
@click.option("--order", type=click.Choice(["asc", "desc"]), default="desc")
@click.option("--limit", type=int, default=None)
@click.option("--offset", type=int, default=0)
@click.pass_context
def runs_list(ctx, command_name, sort_by, order, limit, offset):
    """Index entries of stored runs, newest first by default."""
    filters = {"command": command_name} if command_name else None
    listed = ctx.obj["storage"].list_runs(sort_by, order, limit, offset, filters)
    click.echo(json_encoder({"runs": listed}))
    return EXIT_OK


@runs.command("show")
@click.argument("run_id")
@click.pass_context
def runs_show(ctx, run_id):
    """Print a run's manifest."""
    manifest = ctx.obj["storage"].get_manifest(run_id)
    if manifest is None:
        click.echo(f"Error: no run {run_id}", err=True)
        return EXIT_USAGE
    click.echo(json_encoder(dict(manifest.to_dict(), run_id=run_id)))
    return EXIT_OK


@runs.command("delete")
@click.argument("run_id")
@click.pass_context
def runs_delete(ctx, run_id):
    """Remove a run's manifest, index entry and output directory."""
    if not ctx.obj["storage"].delete_run(run_id):
        click.echo(f"Error: no run {run_id}", err=True)
        return EXIT_USAGE
    click.echo(json_encoder({"deleted": run_id}))
    return EXIT_OK


def main() -> None:
    cli(prog_name="anderson-lab")


if __name__ == "__main__":
    main()
