"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error.  Every flag can also be set through an APC_-prefixed environment
variable (e.g. APC_SERVE_PORT).
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click

from .errors import ApcError, IntegrityError


@click.group()
def cli() -> None:
    """Adaptive paired-comparison toolkit."""


# -- simulate -----------------------------------------------------------------


@cli.command()
@click.option(
    "--policy",
    "policies",
    multiple=True,
    type=click.Choice(["bald", "staircase", "random"]),
    default=("bald", "staircase", "random"),
    show_default=True,
    help="Policy to benchmark; repeat the flag to select several.",
)
@click.option("--observers", default=500, show_default=True, type=int)
@click.option("--trials", default=100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--slope", default=2.5, show_default=True, type=float)
@click.option("--lapse", default=0.02, show_default=True, type=float)
@click.option("--q-min", default=5.0, show_default=True, type=float)
@click.option("--q-max", default=45.0, show_default=True, type=float)
@click.option("--q-fixed", default=None, type=float, help="Fix every observer's true midpoint.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def simulate(policies, observers, trials, seed, slope, lapse, q_min, q_max, q_fixed, out):
    """Benchmark policies: mean squared estimate error vs trial count."""
    from .simulate import SimConfig, export_curves, run_mse_experiment

    config = SimConfig(
        policies=tuple(policies),
        n_observers=observers,
        trials_max=trials,
        true_q=q_fixed if q_fixed is not None else (q_min, q_max),
        slope=slope,
        lapse=lapse,
        seed=seed,
    )
    result = run_mse_experiment(config)
    export_curves(result, out)
    click.echo(f"wrote {sum(len(c) for c in result.curves.values())} rows to {out}")


# -- scale ---------------------------------------------------------------------


@cli.group()
def scale() -> None:
    """Reference-scale construction and linearization."""


@scale.command("build")
@click.option("--rd", "rd_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--levels", default=50, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def scale_build(rd_path, levels, out):
    """Build the objective scale from an RD table (convex hull at log-spaced bitrates)."""
    from .scale import build_initial_scale, load_rd_csv, save_scale_csv

    scale_obj = build_initial_scale(load_rd_csv(rd_path), n_levels=levels)
    save_scale_csv(scale_obj, out)
    click.echo(f"wrote {len(scale_obj)}-level scale to {out}")


@scale.command("fit-pairs")
@click.option("--judgments", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--levels", default=50, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def scale_fit_pairs(judgments, levels, out):
    """Fit per-level perceptual values from pairwise judgments."""
    from .scale import fit_pairwise_values, load_judgments_csv, save_curve_csv

    curve = fit_pairwise_values(load_judgments_csv(judgments), n_levels=levels)
    save_curve_csv(curve, out)
    click.echo(f"wrote {len(curve)}-level perceptual curve to {out}")


@scale.command("linearize")
@click.option("--scale", "scale_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--curve", "curve_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--rd", "rd_path", default=None, type=click.Path(exists=True, path_type=Path),
              help="Optional RD table for exact hull re-selection of recipes.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def scale_linearize(scale_path, curve_path, rd_path, out):
    """Resample the scale so perceptual value is linear in level."""
    from .scale import load_curve_csv, load_rd_csv, load_scale_csv, resample_linear, save_scale_csv

    rd_points = load_rd_csv(rd_path) if rd_path else None
    result = resample_linear(load_scale_csv(scale_path), load_curve_csv(curve_path), rd_points)
    save_scale_csv(result.scale, out)
    click.echo(f"wrote adjusted {len(result.scale)}-level scale to {out}")


@scale.command("nmse")
@click.option("--curve", "curve_path", required=True, type=click.Path(exists=True, path_type=Path))
def scale_nmse(curve_path):
    """Print the curve's normalized MSE relative to perfect linearity."""
    from .scale import linearity_nmse, load_curve_csv

    click.echo(f"{linearity_nmse(load_curve_csv(curve_path)):.6f}")


# -- fit -------------------------------------------------------------------------


@cli.command()
@click.option("--responses", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--scale-min", default=1.0, show_default=True, type=float)
@click.option("--scale-max", default=50.0, show_default=True, type=float)
def fit(responses, out, scale_min, scale_max):
    """Per-rater four-parameter logistic fits with screening verdicts."""
    from .analysis import fit_logistic_nls, load_apc_csv, proportions_from_rows, screen_apc_fit
    from .errors import InsufficientDataError

    rows = load_apc_csv(responses)
    groups: dict[tuple[str, str], list] = {}
    for r in rows:
        groups.setdefault((r.rater_id, r.variant_id), []).append(r)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["rater_id", "variant_id", "n_trials", "midpoint", "slope", "lower", "upper",
             "converged", "residual_norm", "midpoint_se", "screen", "screen_reason"]
        )
        for (rater, variant), group in sorted(groups.items()):
            try:
                result = fit_logistic_nls(proportions_from_rows(group))
            except InsufficientDataError as exc:
                writer.writerow([rater, variant, len(group), "", "", "", "",
                                 False, "", "", "exclude", str(exc)])
                continue
            verdict = screen_apc_fit(result, scale_min=scale_min, scale_max=scale_max)
            p = result.params
            writer.writerow(
                [rater, variant, len(group), repr(p.midpoint), repr(p.slope), repr(p.lower),
                 repr(p.upper), result.converged, repr(result.residual_norm),
                 repr(result.standard_errors["midpoint"]),
                 "include" if verdict.include else "exclude", verdict.reason or ""]
            )
    click.echo(f"wrote {len(groups)} fits to {out}")


# -- analyze -----------------------------------------------------------------------


@cli.group()
def analyze() -> None:
    """Statistical comparisons of scored conditions."""


@analyze.command("effect-size")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--family", default=1, show_default=True, type=int,
              help="Number of comparisons in the Bonferroni family.")
@click.option("--label", default=None, help="Label for the comparison.")
@click.option("--out", default=None, type=click.Path(dir_okay=False, path_type=Path),
              help="Also write the report as CSV.")
def analyze_effect_size(path_a, path_b, family, label, out):
    """Repeated-measures effect size and Bonferroni-corrected paired t-test."""
    from .analysis import load_scores_csv, paired_t_bonferroni
    from .errors import InsufficientDataError

    a = load_scores_csv(path_a)
    b = load_scores_csv(path_b)
    shared = sorted(set(a) & set(b))
    if len(shared) < 2:
        raise InsufficientDataError(
            f"conditions share only {len(shared)} rater(s); need at least 2 matched pairs"
        )
    x = [a[r] for r in shared]
    y = [b[r] for r in shared]
    name = label or f"{path_a.stem} vs {path_b.stem}"
    reports = paired_t_bonferroni([(name, x, y)], family_size=family)
    header = ["label", "n_pairs", "d", "t", "p_raw", "p_adjusted", "significant"]
    click.echo("  ".join(f"{h:>12}" for h in header))
    for r in reports:
        click.echo(
            f"{r.label:>12}  {r.n_pairs:>12}  {r.d:>12.4f}  {r.t:>12.4f}  "
            f"{r.p_raw:>12.5f}  {r.p_adjusted:>12.5f}  {str(r.significant):>12}"
        )
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in reports:
                writer.writerow([r.label, r.n_pairs, repr(r.d), repr(r.t), repr(r.p_raw),
                                 repr(r.p_adjusted), r.significant])


# -- serve ----------------------------------------------------------------------------


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--data-dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--rater-token", default="rater-token", show_default=True)
@click.option("--experimenter-token", default="experimenter-token", show_default=True)
@click.option("--media-dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Optionally serve this directory at /media for demo stimuli.")
def serve(host, port, data_dir, manifest_path, rater_token, experimenter_token, media_dir):
    """Run the HTTP session service."""
    import uvicorn

    from .manifest import load_manifest
    from .service import ServiceConfig, create_app

    app = create_app(
        ServiceConfig(
            data_dir=data_dir,
            manifest=load_manifest(manifest_path),
            rater_token=rater_token,
            experimenter_token=experimenter_token,
        )
    )
    if media_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/media", StaticFiles(directory=media_dir), name="media")
    click.echo(f"serving on http://{host}:{port} (data dir: {data_dir})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


# -- replay -----------------------------------------------------------------------------


@cli.command()
@click.option("--log", "log_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
def replay(log_path):
    """Verify a session log's integrity and print its estimates."""
    from .events import read_events, rebuild_session

    rebuilt = rebuild_session(read_events(log_path))
    state = rebuilt.state
    click.echo(f"session {rebuilt.session_id}: {state.cursor} trials, status {state.status}")
    for est in state.estimates():
        pse = "n/a" if est.pse != est.pse else f"{est.pse:.3f}"
        sd = "n/a" if est.uncertainty != est.uncertainty else f"{est.uncertainty:.3f}"
        click.echo(
            f"  {est.variant}: pse {pse} +/- {sd} ({est.n_trials} trials, {est.method})"
        )


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="APC")
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except IntegrityError as exc:
        click.echo(f"integrity error: {exc}", err=True)
        return 2
    except ApcError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc!r}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
