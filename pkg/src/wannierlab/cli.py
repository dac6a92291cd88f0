"""Command line driver.

Exit codes: 0 success, 1 usage or configuration error, 2 a checked
invariant failed (idempotency guard, Wannier tolerance, Chern integrality,
dichotomy mismatch, or a closed gap).
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .models import SUITE_PRESETS, IdempotencyError, ModelError
from .pipeline import (Cache, ConfigError, ExperimentConfig, dichotomy_table, format_table,
                       load_config, parse_tolerances, run_many, write_outputs)
from .sequences import NotInvertibleError, SpectralGapError

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

STAGES = {
    "spectrum": ("spectrum",),
    "project": ("spectrum", "project"),
    "invariants": ("spectrum", "project", "invariants"),
    "wannier": ("spectrum", "project", "invariants", "wannier"),
}
FULL = STAGES["wannier"]


class CheckFailed(Exception):
    pass


def common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False),
                     help="TOML experiment file."),
        click.option("--preset", help="Preset name, or 'all' for the suite presets."),
        click.option("--R", "radii", type=int, multiple=True,
                     help="Working radius (repeatable, ascending)."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", type=int, help="Seed for random trials and test vectors."),
        click.option("--tol", "tols", multiple=True, metavar="KEY=VAL",
                     help="Tolerance override (repeatable)."),
        click.option("--backend", type=click.Choice(["auto", "ed", "bloch", "sign"]),
                     help="Projection backend."),
        click.option("--figures", is_flag=True, help="Also render PNG figures (needs matplotlib)."),
        click.option("--no-cache", is_flag=True, help="Recompute every stage."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def resolve(config_path, preset, radii, out, seed, tols, backend):
    """Configurations for the requested presets, with flag overrides applied."""
    over = {}
    if radii:
        over["radii"] = list(radii)
    if seed is not None:
        over["seed"] = seed
    if backend:
        over["method"] = backend
    tol = parse_tolerances(tols)
    if config_path:
        base = load_config(config_path)
        d = {**base.__dict__, **over}
        d["tolerances"] = {**base.tolerances, **tol}
        if out:
            d["out"] = out
        return [ExperimentConfig(**d)], d["out"]
    if not preset:
        raise click.UsageError("give --config or --preset")
    names = SUITE_PRESETS if preset == "all" else [preset]
    cfgs = [ExperimentConfig.for_preset(n, tolerances=tol, **over) for n in names]
    return cfgs, out or "out"


def execute(cfgs, out, stages, figures, no_cache, table=False, echo=None):
    cache = Cache(None if no_cache else Path(out) / "cache")
    results = run_many(cfgs, stages, cache)
    rows = dichotomy_table(results) if table else None
    config = cfgs[0].to_dict() if len(cfgs) == 1 else None
    seed = cfgs[0].seed
    written = write_outputs(results, out, seed, config=config, table=rows, figures=figures)
    if echo:
        echo(results, rows)
    click.echo(f"wrote {', '.join(written)} to {out}")
    failed = [f"{r.preset}:{k}" for r in results for k, ok in r.checks.items() if not ok]
    if failed:
        raise CheckFailed("checks failed: " + ", ".join(failed))
    return results


def _echo_projections(results, rows):
    for r in results:
        click.echo(f"{r.preset} ({r.report['family']}, backend {r.report['method']})")
        click.echo("  R  support  idempotency  alpha    s       delta_alpha  verdict")
        for p in r.report.get("projections", []):
            da = "-" if p["delta_alpha"] is None else f"{p['delta_alpha']:+.3f}"
            click.echo(f"  {p['R']:<3d}{p['support']:<9d}{p['idempotency']:<13.3g}"
                       f"{p['alpha']:<9.4g}{p['s']:<8.3g}{da:<13s}{p['decay_verdict']}")


def _echo_invariants(method):
    def echo(results, rows):
        for r in results:
            inv = r.report.get("kclass", {})
            click.echo(f"{r.preset}: verdict {inv.get('verdict')} ({inv.get('predicted')})")
            vals = inv.get("invariants", {})
            rs = inv.get("real_space")
            mom = vals.get("chern", vals.get("chern_magnetic_bloch"))
            if method in ("momentum", "both") and "chern" in vals:
                click.echo(f"  momentum-space Chern: {mom}")
            if method in ("real-space", "both") and rs is not None:
                click.echo(f"  real-space Chern: {rs['value']:.6f} (support {rs['support']})")
            if method == "both" and rs is not None:
                click.echo(f"  |real - momentum| = {inv['momentum_vs_real_space']:.3g}")
            for k in ("trace", "triple", "rank"):
                if k in vals:
                    click.echo(f"  {k}: {vals[k]}")
    return echo


def _echo_wannier(results, rows):
    for r in results:
        w = r.report.get("wannier", {})
        click.echo(f"{r.preset}: outcome {w.get('outcome')}")
        for s in w.get("gram_sweep", []):
            fl = "skipped" if s["floor"] is None else f"{s['floor']:.4g}"
            click.echo(f"  Gram floor at R={s['R']}: {fl}")
        if "basis" in w:
            click.echo(f"  orthonormality error {w['basis']['orthonormality_error']:.3g}")
        if "frame" in w:
            click.echo(f"  frame deviation {w['frame']['frame_deviation']:.3g}")


def _echo_table(results, rows):
    click.echo(format_table(rows))


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Wannier bases, gap projections and freeness invariants on lattice models."""


@cli.command()
@click.argument("config_file", required=False, type=click.Path(dir_okay=False))
@common
def run(config_file, config_path, preset, radii, out, seed, tols, backend, figures, no_cache):
    """Full pipeline from a TOML config (positional or --config)."""
    path = config_file or config_path
    if not path:
        raise click.UsageError("run needs a config file")
    cfgs, out = resolve(path, None, radii, out, seed, tols, backend)
    execute(cfgs, out, FULL, figures, no_cache, table=True, echo=_echo_table)


@cli.command()
@common
def spectrum(config_path, preset, radii, out, seed, tols, backend, figures, no_cache):
    """Bulk spectrum, gaps and the selected window."""
    cfgs, out = resolve(config_path, preset, radii, out, seed, tols, backend)

    def echo(results, rows):
        for r in results:
            w = r.report["window"]
            lo, hi = (("-inf" if k == "E_lo" else "inf") if w[k] is None else f"{w[k]:.6g}"
                      for k in ("E_lo", "E_hi"))
            click.echo(f"{r.preset}: {len(r.report['gaps'])} gap(s); window [{lo}, {hi}]")
    execute(cfgs, out, STAGES["spectrum"], figures, no_cache, echo=echo)


@cli.command()
@common
def project(config_path, preset, radii, out, seed, tols, backend, figures, no_cache):
    """Gap projections at each radius with decay-convergence columns."""
    cfgs, out = resolve(config_path, preset, radii, out, seed, tols, backend)
    execute(cfgs, out, STAGES["project"], figures, no_cache, echo=_echo_projections)


@cli.command()
@common
@click.option("--method", "chern_method", type=click.Choice(["momentum", "real-space", "both"]),
              default="both", show_default=True, help="Which Chern evaluations to print.")
def invariants(config_path, preset, radii, out, seed, tols, backend, figures, no_cache,
               chern_method):
    """K-theoretic invariants and the freeness verdict."""
    cfgs, out = resolve(config_path, preset, radii, out, seed, tols, backend)
    execute(cfgs, out, STAGES["invariants"], figures, no_cache,
            echo=_echo_invariants(chern_method))


@cli.command()
@common
def wannier(config_path, preset, radii, out, seed, tols, backend, figures, no_cache):
    """Orthonormal Wannier basis, or the tight-frame fallback."""
    cfgs, out = resolve(config_path, preset, radii, out, seed, tols, backend)
    execute(cfgs, out, FULL, figures, no_cache, echo=_echo_wannier)


@cli.command()
@common
def dichotomy(config_path, preset, radii, out, seed, tols, backend, figures, no_cache):
    """Verdict versus Wannier outcome table."""
    cfgs, out = resolve(config_path, preset or "all", radii, out, seed, tols, backend)
    execute(cfgs, out, FULL, figures, no_cache, table=True, echo=_echo_table)


@cli.command()
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", "tols", multiple=True, metavar="KEY=VAL")
@click.option("--figures", is_flag=True)
@click.option("--no-cache", is_flag=True)
def suite(out, seed, tols, figures, no_cache):
    """Run every bundled preset and print the dichotomy table."""
    cfgs, out = resolve(None, "all", (), out, seed, tols, None)
    execute(cfgs, out, FULL, figures, no_cache, table=True, echo=_echo_table)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="wannierlab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except (ConfigError, ModelError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (CheckFailed, SpectralGapError, IdempotencyError, NotInvertibleError) as exc:
        click.echo(f"check failed: {exc}", err=True)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
