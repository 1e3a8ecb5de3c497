"""Command-line front end.

Subcommands: ``run`` (config-driven experiment grid), ``eval`` (score a
kernel file on a measure pair), ``solve`` (exact OT plan), ``corrupt``
(adversarial sample corruption), ``plot`` (CSV -> SVG curves), ``gen``
(write a synthetic setting to disk).

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
failures.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from ._toml import load_path
from .error_metric import transportation_error
from .estimators import resolved_defaults
from .exceptions import SolverFailure
from .experiments import (
    ExperimentConfig,
    bootstrap_quantiles,
    emit_csv,
    generate_setting,
    read_rows_csv,
    run_experiment,
    summarize,
)
from .corruption import Composite, CorruptionBudget, DirectedShift, RandomRelocate, corrupt
from .kernels import MonteCarloConfig, pipeline_from_json, pipeline_to_json
from .measures import empirical, read_measure, write_measure
from .ot_core import exact_ot, plan_to_json
from .plotting import emit_checkerboard_svg, emit_svg_plot
from .seeding import derive_rng

_ADVERSARY = {"relocate": RandomRelocate, "shift": DirectedShift, "composite": Composite}


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SolverFailure as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)
        except (ValueError, OSError, KeyError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="stochot")
def main():
    """Stochastic optimal-transport map estimation toolbox."""


def _load_config(path: Path) -> dict:
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    return load_path(path)


def _parse_params(params: tuple[str, ...]) -> dict:
    out = {}
    for item in params:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Experiment config (TOML or JSON).")
@click.option("--out", type=click.Path(path_type=Path), default=Path("results.csv"), show_default=True)
@click.option("--svg", type=click.Path(path_type=Path), default=None, help="Also render curves to SVG.")
@click.option("--metric", default="ep", show_default=True)
@click.option("--estimator", "estimator_names", multiple=True,
              help="Estimator name; repeatable. Overrides the config's list.")
@click.option("--param", "params", multiple=True,
              help="Estimator hyperparameter key=value (or estimator.key=value); repeatable.")
@click.option("--timings", is_flag=True, help="Include wall-time rows (breaks byte determinism).")
@_guarded
def run(config_path: Path, out: Path, svg: Path | None, metric: str,
        estimator_names: tuple, params: tuple, timings: bool):
    """Run the seeded (iteration x sample size x estimator) grid."""
    payload = _load_config(config_path)
    cfg = ExperimentConfig.from_dict(payload)
    if estimator_names:
        cfg = replace(cfg, estimators=tuple((name, {}) for name in estimator_names))
    if params:
        overrides = _parse_params(params)
        ests = []
        for name, opts in cfg.estimators:
            opts = dict(opts)
            for key, value in overrides.items():
                target, dot, sub = key.partition(".")
                if dot and target == name:
                    opts[sub] = value
                elif not dot:
                    opts[key] = value
            ests.append((name, opts))
        cfg = replace(cfg, estimators=tuple(ests))
    rows = run_experiment(cfg)
    metadata = {
        "setting": cfg.setting,
        "d": cfg.d,
        "N": cfg.N,
        "K": cfg.K,
        "p": cfg.p,
        "n_grid": ",".join(str(n) for n in cfg.n_grid),
        "master_seed": cfg.master_seed,
        "bootstrap_B": cfg.bootstrap.B,
        "bootstrap_quantiles": ",".join(str(q) for q in cfg.bootstrap.quantiles),
        "version": __version__,
    }
    if cfg.budget is not None:
        metadata["budget"] = f"eps={cfg.budget.eps},rho={cfg.budget.rho},adversary={cfg.adversary}"
    for name, overrides in cfg.estimators:
        for n in cfg.n_grid:
            resolved = resolved_defaults(name, n, cfg.d, cfg.p, overrides)
            metadata[f"params.{name}.n{n}"] = json.dumps(resolved, sort_keys=True)
    emit_csv(rows, out, metadata=metadata, include_timings=timings)
    click.echo(f"wrote {out}")
    if svg is not None:
        summary = summarize(rows, cfg, metric=metric)
        emit_svg_plot(summary, svg, metric=metric, title=f"setting {cfg.setting}")
        click.echo(f"wrote {svg}")


@main.command("eval")
@click.option("--mu", "mu_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--nu", "nu_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--kernel", "kernel_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Pipeline JSON file.")
@click.option("--p", type=float, default=1.0, show_default=True)
@click.option("--mc-samples", type=int, default=10_000, show_default=True)
@click.option("--mc-seed", type=int, default=0, show_default=True)
@click.option("--mc-replicates", type=int, default=10, show_default=True)
@_guarded
def eval_cmd(mu_path, nu_path, kernel_path, p, mc_samples, mc_seed, mc_replicates):
    """Score a kernel against a measure pair; prints a report as JSON."""
    mu = read_measure(mu_path)
    nu = read_measure(nu_path)
    pipe = pipeline_from_json(Path(kernel_path).read_text())
    mc = MonteCarloConfig(mc_samples, mc_seed, mc_replicates)
    report = transportation_error(pipe, mu, nu, p, mc=mc)
    click.echo(report.to_json())


@main.command()
@click.option("--mu", "mu_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--nu", "nu_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--p", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Plan JSON path (stdout if omitted).")
@_guarded
def solve(mu_path, nu_path, p, out):
    """Exact optimal transport between two measure files."""
    plan = exact_ot(read_measure(mu_path), read_measure(nu_path), p)
    text = plan_to_json(plan)
    if out is None:
        click.echo(text)
    else:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")


@main.command("corrupt")
@click.option("--input", "input_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--eps", type=float, default=0.0, show_default=True)
@click.option("--rho", type=float, default=0.0, show_default=True)
@click.option("--p", type=float, default=1.0, show_default=True)
@click.option("--adversary", type=click.Choice(sorted(_ADVERSARY)), default="composite", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@_guarded
def corrupt_cmd(input_path, eps, rho, p, adversary, seed, out):
    """Corrupt the points of a measure file within a TV/W_p budget."""
    m = read_measure(input_path)
    budget = CorruptionBudget(eps, rho, p)
    pts = corrupt(m.points, budget, _ADVERSARY[adversary](), derive_rng(seed, "corrupt"))
    write_measure(empirical(pts), out)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--csv", "csv_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--metric", default="ep", show_default=True)
@click.option("--b", "boot_b", type=int, default=1000, show_default=True, help="Bootstrap resamples.")
@click.option("--quantiles", default="0.1,0.9", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--title", default=None)
@_guarded
def plot(csv_path, out, metric, boot_b, quantiles, seed, title):
    """Render log-log mean curves with bootstrap bands from a results CSV."""
    rows = read_rows_csv(csv_path)
    qs = tuple(float(q) for q in quantiles.split(","))
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r.metric != metric or not np.isfinite(r.value):
            continue
        groups.setdefault((r.estimator, r.d, r.n), []).append(r.value)
    if not groups:
        raise ValueError(f"no finite rows for metric {metric!r}")
    summary = []
    for (est, d, n), vals in sorted(groups.items()):
        rng = derive_rng(seed, "bootstrap", metric, est, d, n)
        bands = bootstrap_quantiles(vals, boot_b, qs, rng)
        entry = {"estimator": est, "d": d, "n": n, "mean": float(np.mean(vals)), "count": len(vals)}
        for q, v in bands.items():
            entry[f"q{q:g}"] = v
        summary.append(entry)
    emit_svg_plot(summary, out, metric=metric, title=title)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--setting", type=click.Choice(["a", "b", "figure2", "checkerboard"]), required=True)
@click.option("--d", type=int, default=3, show_default=True)
@click.option("--N", "n_support", type=int, default=2000, show_default=True,
              help="Ground-truth support size N (grid size M for figure2).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--delta", type=float, default=0.05, show_default=True, help="figure2 band width.")
@click.option("--cells", type=int, default=8, show_default=True, help="checkerboard cells per side.")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@_guarded
def gen(setting, d, n_support, seed, delta, cells, out_dir):
    """Write a synthetic setting: measures plus reference pipelines."""
    cfg = ExperimentConfig(
        setting=setting, d=d, N=n_support, n_grid=(min(10, n_support),), K=1,
        master_seed=seed, figure2_delta=delta, cells=cells,
    )
    data = generate_setting(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_measure(data.mu, out_dir / "mu.csv")
    write_measure(data.nu, out_dir / "nu.csv")
    written = ["mu.csv", "nu.csv"]
    if data.t_star is not None:
        (out_dir / "t_star.json").write_text(pipeline_to_json(data.t_star))
        written.append("t_star.json")
    if "kappa_star" in data.extra:
        (out_dir / "kappa_star.json").write_text(pipeline_to_json(data.extra["kappa_star"]))
        written.append("kappa_star.json")
    if setting == "checkerboard":
        from .estimators import EstimatorConfig, rounding_estimator
        from .measures import sample as draw

        rng = derive_rng(seed, "checkerboard-figure")
        n_fig = min(100, n_support)
        xs = draw(data.mu, n_fig, rng)
        ys = draw(data.nu, n_fig, rng)
        pipe = rounding_estimator(xs, ys, EstimatorConfig(p=1.0))
        emit_checkerboard_svg(data.mu, data.nu, pipe, out_dir / "checkerboard.svg")
        written.append("checkerboard.svg")
    click.echo(f"wrote {', '.join(written)} to {out_dir}")


if __name__ == "__main__":
    main()
