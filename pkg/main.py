import json
import logging
import math
import sys
from typing import List, Optional

import click
import numpy as np
import pandas as pd
from dotenv import load_dotenv

load_dotenv()  # load env before reading the defaults

from src.certificates import (
    LemmaId,
    numeric_check,
    pgd_two_step_coefficients,
    verify_descent_lemma,
)
from src.engine import (
    DCInstance,
    Trajectory,
    best_gradient_mapping,
    dca_run,
    gradient_residual,
    map_pgd_to_dc,
    pgd_run,
    schedule_curvature_shift,
)
from src.errors import DCRatesError, DecompositionError
from src.oracles import CurvatureBounds, Curvatures, SubgradientPolicy, oracle_from_dict
from src.rates import (
    applicable_bounds,
    best_rate_bound,
    classify_regime,
    pgd_stepsize_regimes,
    pgd_threshold_stepsize,
    threshold_mu2,
    trajectory_bound_gaps,
)
from src.utils import Settings, jsonable, parse_extended_real, parse_vector, setup_logging
from src.worstcase import DEFAULT_FAMILY, FAMILIES, SearchSpec, search_worst, violation_scan

logger = logging.getLogger(__name__)

SCHEMA = "dc-rates/1"


class DCRatesGroup(click.Group):
    """Maps usage and input errors to exit code 1 and failed verifications to 2."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            rv = super().main(*args, **kwargs)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        except click.ClickException as e:
            e.show()
            sys.exit(1)
        except DecompositionError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(2)
        except DCRatesError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else 0)


def curvature_options(required: bool = True):
    def decorator(f):
        for name in reversed(("mu1", "L1", "mu2", "L2")):
            f = click.option(
                f"--{name}",
                name,
                required=required,
                type=str,
                help=f"Curvature bound {name}; decimals are read exactly, 'inf' allowed.",
            )(f)
        return f

    return decorator


def parse_curvatures(mu1, L1, mu2, L2) -> Curvatures:
    try:
        return Curvatures.of(mu1, L1, mu2, L2)
    except ValueError as e:
        raise click.BadParameter(str(e))


def emit(ctx: click.Context, payload: dict, frame: Optional[pd.DataFrame] = None) -> None:
    """Write a payload to stdout as versioned JSON, or its table as CSV."""
    if ctx.obj["out"] == "csv":
        if frame is None:
            flat = jsonable(payload)
            frame = pd.DataFrame(
                [{k: v for k, v in flat.items() if not isinstance(v, (dict, list))}]
            )
        click.echo(frame.to_csv(index=False), nl=False)
    else:
        click.echo(json.dumps(jsonable({"schema": SCHEMA, **payload}), indent=2))


def _out(ctx: click.Context, default: str) -> None:
    if ctx.obj["out"] is None:
        ctx.obj["out"] = default


def load_json(path: str) -> dict:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise click.ClickException(f"{path} is not valid JSON: {e}")


@click.group(cls=DCRatesGroup)
@click.option("--out", type=click.Choice(["json", "csv"]), default=None, help="Output format.")
@click.option("--seed", type=int, default=None, help="Random seed (default DC_RATES_SEED).")
@click.option("--tol", type=float, default=None, help="Slack tolerance (default DC_RATES_TOL).")
@click.option("--log-level", default=None, help="Logging level (default DC_RATES_LOG_LEVEL).")
@click.pass_context
def cli(ctx, out, seed, tol, log_level) -> None:
    settings = Settings.from_env()
    if seed is not None:
        settings.seed = seed
    if tol is not None:
        settings.tol = tol
    if log_level is not None:
        settings.log_level = log_level.upper()
    setup_logging(settings.log_level)
    ctx.obj = {"settings": settings, "out": out}


@cli.command()
@curvature_options()
@click.pass_context
def classify(ctx, mu1, L1, mu2, L2) -> None:
    """Regime, rate coefficient and status of a curvature quadruple."""
    _out(ctx, "json")
    c = parse_curvatures(mu1, L1, mu2, L2)
    report = classify_regime(*c)
    emit(
        ctx,
        {
            "command": "classify",
            "curvatures": list(c),
            "regime": report.regime,
            "p": report.p_value,
            "mu_sum": report.mu_sum,
            "status": report.status,
            "description": report.description,
            "threshold_mu2": threshold_mu2(c.mu1, c.L2),
        },
    )


@cli.command()
@curvature_options()
@click.option("--N", "N", type=int, required=True, help="Number of iterations.")
@click.option("--delta", type=str, default=None, help="Objective gap F(x0) - F_lo.")
@click.option("--f0", type=str, default=None, help="F(x0), used with --f-lo.")
@click.option("--f-lo", "f_lo", type=str, default=None, help="Lower bound on F.")
@click.pass_context
def rate(ctx, mu1, L1, mu2, L2, N, delta, f0, f_lo) -> None:
    """Best bound on 1/2 min_k |x^k - x^{k+1}|^2 after N + 1 steps."""
    _out(ctx, "json")
    c = parse_curvatures(mu1, L1, mu2, L2)
    if delta is None:
        if f0 is None or f_lo is None:
            raise click.UsageError("Give --delta or both --f0 and --f-lo")
        gap = parse_extended_real(f0) - parse_extended_real(f_lo)
    else:
        gap = parse_extended_real(delta)
    best = best_rate_bound(c, N, gap)
    if not best.proven:
        click.echo(
            f"CONJECTURE: {best.formula_id} is not proven; the proven bound is "
            f"{max(r.bound for r in applicable_bounds(c, N, gap) if r.proven):.6g}",
            err=True,
        )
    emit(
        ctx,
        {
            "command": "rate",
            "curvatures": list(c),
            "N": N,
            "delta": gap,
            "bound": best.bound,
            "denominator": best.denominator,
            "formula_id": best.formula_id,
            "proven": best.proven,
            "regime": best.regime,
            "applicable": [r.dict() for r in applicable_bounds(c, N, gap)],
        },
    )


def _run_instance(payload: dict, x0: np.ndarray, N: int, policy: SubgradientPolicy, shifts):
    if "phi" in payload:
        phi, h = oracle_from_dict(payload["phi"]), oracle_from_dict(payload["h"])
        return pgd_run(phi, h, payload["gamma"], x0, N)
    if "f1" in payload:
        return dca_run(DCInstance.from_dict(payload), x0, N, policy, shifts)
    raise click.ClickException("Instance needs either f1/f2 or phi/h/gamma")


@cli.command()
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--x0", required=True, help="Starting point, comma separated.")
@click.option("--iters", "N", type=int, default=10, help="N; the run makes N + 1 steps.")
@click.option(
    "--policy",
    type=click.Choice([p.value for p in SubgradientPolicy]),
    default=SubgradientPolicy.CANONICAL.value,
)
@click.option("--metric", type=click.Choice(["mapping", "residual"]), default="mapping")
@click.option("--shifts", default=None, help="Per-step curvature shifts, comma separated.")
@click.pass_context
def run(ctx, instance, x0, N, policy, metric, shifts) -> None:
    """Run DCA (or PGD) on an instance file and record the trajectory."""
    _out(ctx, "json")
    try:
        start = parse_vector(x0)
        lams = None if shifts is None else parse_vector(shifts).tolist()
    except ValueError as e:
        raise click.BadParameter(str(e))
    traj = _run_instance(load_json(instance), start, N, SubgradientPolicy(policy), lams)

    gaps = trajectory_bound_gaps(traj)
    if metric == "mapping":
        index, value = best_gradient_mapping(traj)
    else:
        index, value = gradient_residual(traj)
    emit(
        ctx,
        {
            "command": "run",
            "metric": {"name": metric, "index": index, "value": value},
            "delta": traj.delta,
            "gap_to_bound": gaps,
            "trajectory": traj.to_dict(),
        },
        traj.to_frame(gaps) if ctx.obj["out"] == "csv" else None,
    )


@cli.command("verify-certificate")
@click.option("--lemma", type=click.Choice([m.value for m in LemmaId]), required=True)
@curvature_options(required=False)
@click.option("--k", type=int, default=0, help="Step index of the linear-rate lemmas.")
@click.option(
    "--from-trajectory",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON written by `run`; checks the lemma on its iterates.",
)
@click.pass_context
def verify_certificate(ctx, lemma, mu1, L1, mu2, L2, k, from_trajectory) -> None:
    """Decompose a descent lemma into nonnegative squares, or check it on a run."""
    _out(ctx, "json")
    given = [mu1, L1, mu2, L2]
    if from_trajectory is None and any(v is None for v in given):
        raise click.UsageError("Give all of --mu1 --L1 --mu2 --L2 or --from-trajectory")
    c = parse_curvatures(*given) if all(v is not None for v in given) else None

    if from_trajectory is not None:
        payload = load_json(from_trajectory)
        traj = Trajectory.from_dict(payload.get("trajectory", payload))
        slacks = [
            {"k": j, "slack": numeric_check(lemma, traj, j, c)} for j in range(traj.N)
        ]
        tol = ctx.obj["settings"].tol
        valid = all(s["slack"] >= -tol for s in slacks)
        emit(
            ctx,
            {"command": "verify-certificate", "lemma": lemma, "valid": valid, "slacks": slacks},
            pd.DataFrame(slacks),
        )
        if not valid:
            ctx.exit(2)
        return

    try:
        decomposition = verify_descent_lemma(lemma, c, k)
    except DecompositionError as e:
        emit(
            ctx,
            {
                "command": "verify-certificate",
                "lemma": lemma,
                "valid": False,
                "label": e.label,
                "value": e.value,
                "message": str(e),
            },
        )
        ctx.exit(2)
    emit(
        ctx,
        {"command": "verify-certificate", "valid": True, **decomposition.dict()},
        pd.DataFrame([t.dict() for t in decomposition.terms]),
    )


@cli.command("search-worstcase")
@curvature_options()
@click.option("--N", "N", type=int, required=True)
@click.option("--budget", type=int, default=1000, help="Number of random trials.")
@click.option("--family", type=click.Choice(list(FAMILIES)), default=DEFAULT_FAMILY)
@click.option("--max-pieces", type=int, default=3)
@click.option("--workers", type=int, default=1)
@click.option("--refine", type=int, default=3, help="Trials refined with Nelder-Mead.")
@click.pass_context
def search_worstcase(ctx, mu1, L1, mu2, L2, N, budget, family, max_pieces, workers, refine):
    """Search small instances for the largest ratio to the rate bound."""
    _out(ctx, "json")
    c = parse_curvatures(mu1, L1, mu2, L2)
    spec = SearchSpec(
        curvatures=tuple(float(v) for v in c),
        N=N,
        family=family,
        budget=budget,
        seed=ctx.obj["settings"].seed,
        max_pieces=max_pieces,
        workers=workers,
        refine=refine,
    )
    report = search_worst(spec)
    payload = {"command": "search-worstcase", **report.dict()}
    summary = {k: v for k, v in payload.items() if k not in ("witness", "regime")}
    summary["regime"] = report.regime.regime
    emit(ctx, payload, pd.DataFrame([jsonable(summary)]))
    if report.failures:
        ctx.exit(2)


@cli.command()
@click.option("--N", "Ns", type=int, multiple=True, default=[1], help="Repeatable.")
@click.option("--trials", type=int, default=20, help="Random trials per cell.")
@click.option("--grid", type=int, default=50, help="Points per axis.")
@click.option("--family", type=click.Choice(list(FAMILIES)), default=DEFAULT_FAMILY)
@click.option("--workers", type=int, default=1)
@click.option("--progress/--no-progress", default=True)
@click.pass_context
def sweep(ctx, Ns, trials, grid, family, workers, progress) -> None:
    """Regime map with empirical tightness over (mu2/mu1, L2/mu1) at L1/mu1 = 2."""
    _out(ctx, "csv")
    report = violation_scan(
        Ns,
        trials,
        np.linspace(-0.95, 2.5, grid),
        np.linspace(-0.9, 4.0, grid),
        family=family,
        seed=ctx.obj["settings"].seed,
        workers=workers,
        progress=progress,
    )
    emit(
        ctx,
        {"command": "sweep", **report.dict()},
        report.to_frame(),
    )
    if report.failures:
        ctx.exit(2)


@cli.command()
@curvature_options()
@click.option("--gammas", required=True, help="PGD stepsizes, comma separated.")
@click.pass_context
def schedule(ctx, mu1, L1, mu2, L2, gammas) -> None:
    """Curvature shifts equivalent to a PGD stepsize schedule."""
    _out(ctx, "json")
    c = parse_curvatures(mu1, L1, mu2, L2)
    steps: List = [parse_extended_real(g) for g in gammas.split(",") if g.strip()]
    lams = schedule_curvature_shift(c.mu1, c.L2, c.mu2, steps)
    rows = [
        {
            "k": k,
            "gamma": gamma,
            "lam": lam,
            "curvatures": [c.mu1 - lam, c.L1 - lam, c.mu2 - lam, c.L2 - lam],
        }
        for k, (gamma, lam) in enumerate(zip(steps, lams))
    ]
    frame = pd.DataFrame(
        [{"k": r["k"], "gamma": float(r["gamma"]), "lam": float(r["lam"])} for r in rows]
    )
    emit(ctx, {"command": "schedule", "shifts": rows}, frame)


@cli.command()
@click.option("--L-phi", "L_phi", type=float, required=True)
@click.option("--mu-phi", "mu_phi", type=float, required=True)
@click.option("--mu-h", "mu_h", type=float, default=0.0)
@click.option("--L-h", "L_h", type=str, default="inf")
@click.option("--gamma", type=float, default=None, help="Evaluate the rate at this stepsize.")
@click.option("--N", "N", type=int, default=1)
@click.option("--delta", type=float, default=1.0)
@click.pass_context
def pgd(ctx, L_phi, mu_phi, mu_h, L_h, gamma, N, delta) -> None:
    """Threshold stepsize, stepsize regimes and PGD rates through the DC mapping."""
    _out(ctx, "json")
    L_h = float(parse_extended_real(L_h))
    try:
        threshold = pgd_threshold_stepsize(L_phi, mu_phi, mu_h)
    except DCRatesError as e:
        logger.info(f"No threshold stepsize: {e}")
        threshold = None
    intervals = pgd_stepsize_regimes(L_phi, mu_phi, mu_h, L_h)
    payload = {
        "command": "pgd",
        "threshold_stepsize": threshold,
        "intervals": [i.dict() for i in intervals],
    }
    if gamma is not None:
        c = map_pgd_to_dc(CurvatureBounds(mu_phi, L_phi), CurvatureBounds(mu_h, L_h), gamma)
        payload["curvatures"] = list(c)
        payload["rate"] = best_rate_bound(c, N, delta).dict()
        if mu_h == 0 and math.isinf(L_h):
            payload["two_step"] = pgd_two_step_coefficients(L_phi, mu_phi, gamma).dict()
    emit(ctx, payload, pd.DataFrame([i.dict() for i in intervals]))


if __name__ == "__main__":
    cli()
