"""Command-line surface: model files in, JSON/CSV reports out."""
import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from app.config import configure_logging, settings
from app.duality import solve_dual, solve_primal
from app.errors import (
    CompletenessRequired,
    LabError,
    MartingalePropertyViolation,
    NoArbitrageViolation,
    SolverFailure,
)
from app.ingestion import LoadedModel, grid_from_file, load_any, load_counterexample_file, load_model_file
from app.market import (
    arbitrage_bounds,
    is_complete,
    martingale_measure_constraints,
    random_replicable_claims,
)
from app.preferences import UtilityField, parse_utility
from app.pricing import (
    PriceReport,
    invariance_table,
    invariant_claim_basis,
    indifference_price,
    non_invariance_witness,
    price_via_numeraire,
)
from app.prob_space import Measure
from app.reporting import frame_records, write_csv, write_json, write_plot_data
from app.schemas import (
    CounterexampleResponse,
    DualResponse,
    InvarianceResponse,
    PriceResponse,
    SolveResponse,
    StabilityResponse,
    ValidateResponse,
    WeakInfoResponse,
)
from app.stability_lab import (
    ConvergenceReport,
    counterexample_truncation,
    log_spaced,
    mixture_sequence,
    run_optimizer_convergence,
    run_price_convergence,
    run_value_convergence,
    run_weak_info_convergence,
    two_factor_invariance_demo,
    two_factor_model,
)
from app.visualization import save_convergence_plot, save_truncation_plot
from app.weak_info import (
    Law,
    certainty_equivalent_gain,
    information_price_impact,
    law_of,
    minimal_measure,
    value_of_weak_information,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_FALSIFIED = 4
EXIT_USAGE = 64

EXPERIMENTS = ("value", "optimizer", "price", "weakinfo", "two-factor")
REPLICATION_PRICE_TOLERANCE = 1e-8


class UsageError(Exception):
    """Bad command-line usage."""


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def exit_code_for(error: BaseException) -> int:
    """Map an exception onto the documented exit codes."""
    if isinstance(error, UsageError):
        return EXIT_USAGE
    if isinstance(error, (SolverFailure, MartingalePropertyViolation)):
        return EXIT_SOLVER
    if isinstance(error, (ValueError, FileNotFoundError, NoArbitrageViolation, CompletenessRequired)):
        return EXIT_VALIDATION
    return EXIT_SOLVER


def _outcome_map(space, values) -> Dict[str, float]:
    return {label: float(v) for label, v in zip(space.outcomes, values)}


def _utility(loaded: LoadedModel, text: Optional[str]) -> UtilityField:
    return loaded.utility if text is None else parse_utility(loaded.space, text)


def _measure(loaded: LoadedModel, name: Optional[str]) -> Measure:
    return loaded.P if name is None else loaded.measure(name)


def _parse_law(text: str) -> Law:
    """Parse "up=0.6,down=0.4" into a Law."""
    weights = {}
    for item in text.split(","):
        label, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"law entries must look like label=weight, got {item!r}")
        weights[label.strip()] = float(value)
    return Law.from_mapping(weights)


def _emit(args, report, frame=None, series=None) -> None:
    write_json(report, path=args.out, stream=args.stdout)
    if args.csv and frame is not None:
        write_csv(frame, args.csv)
    if args.plot_data and series is not None:
        write_plot_data(series, args.plot_data)


def price_response(report: PriceReport, bounds: Optional[Tuple[float, float]] = None) -> PriceResponse:
    space = report.q_hat.space
    return PriceResponse(
        claim=report.claim,
        price=report.price,
        x=report.x,
        utility=report.utility,
        y_star=report.y_star,
        pricing_density=_outcome_map(space, report.pricing_density.values),
        pricing_measure=report.q_hat.as_dict(),
        martingale_certificate=report.martingale_certificate,
        definitional_check=report.definitional_check,
        definitional_passed=report.definitional_passed,
        definitional_slack={format(q, "g"): slack for q, slack in report.definitional_slack.items()},
        arbitrage_bounds=bounds,
    )


def dual_response(dual) -> DualResponse:
    return DualResponse(
        y=dual.y,
        value=dual.value,
        q_hat=dual.q_hat.as_dict(),
        boundary_flag=dual.boundary_flag,
        iterations=dual.iterations,
        kkt_residual=dual.kkt_residual,
        feasibility_residual=dual.feasibility_residual,
    )


def cmd_validate(args) -> int:
    reports = []
    code = EXIT_OK
    for path in args.files:
        try:
            loaded = load_any(path)
        except (ValueError, FileNotFoundError, NoArbitrageViolation) as error:
            logger.error("%s: %s", path, error)
            reports.append(ValidateResponse(path=str(path), kind="unknown", valid=False, error=str(error)))
            code = EXIT_VALIDATION
            continue
        if isinstance(loaded, LoadedModel):
            constraints = martingale_measure_constraints(loaded.model)
            reports.append(ValidateResponse(
                path=str(path),
                kind="market",
                valid=True,
                outcomes=loaded.space.size,
                assets=loaded.model.n_assets,
                complete=constraints.dimension == 0,
                polytope_dimension=constraints.dimension,
            ))
        else:
            reports.append(ValidateResponse(path=str(path), kind="counterexample", valid=True))
    _emit(args, {"files": [r.model_dump() for r in reports]})
    return code


def cmd_solve(args) -> int:
    loaded = load_model_file(args.model)
    U = _utility(loaded, args.utility)
    P = _measure(loaded, args.measure)
    constraints = martingale_measure_constraints(loaded.model)
    primal = solve_primal(loaded.model, U, P, args.x, constraints=constraints)
    dual_at_y = solve_dual(loaded.model, U, P, args.y, constraints=constraints) if args.y is not None else None
    strategy = None
    if primal.strategy is not None:
        trading = loaded.space.non_terminal_nodes
        strategy = {node: [float(v) for v in primal.strategy.holding(node)] for node in trading}
    dump = None
    if args.dump_constraints:
        dump = {
            "A": constraints.A.tolist(),
            "b": [constraints.b.tolist()],
            "null_basis": constraints.null_basis.tolist(),
        }
    report = SolveResponse(
        model=loaded.name,
        utility=U.name,
        x=args.x,
        value=primal.value,
        y_star=primal.y_star,
        terminal_wealth=primal.wealth_map(),
        strategy=strategy,
        budget_residual=primal.budget_residual,
        complete=constraints.dimension == 0,
        polytope_dimension=constraints.dimension,
        dual=dual_response(primal.dual),
        dual_at_y=dual_response(dual_at_y) if dual_at_y is not None else None,
        constraints=dump,
    )
    _emit(args, report)
    return EXIT_OK


def cmd_price(args) -> int:
    loaded = load_model_file(args.model)
    U = _utility(loaded, args.utility)
    P = _measure(loaded, args.measure)
    names = args.claim or list(loaded.claims)
    reports = []
    primal = None
    for name in names:
        claim = loaded.claim(name)
        if args.numeraire:
            report = price_via_numeraire(loaded.model, U, P, args.x, claim, args.numeraire, verify=not args.no_verify)
        else:
            primal = primal or solve_primal(loaded.model, U, P, args.x)
            report = indifference_price(loaded.model, U, P, args.x, claim, verify=not args.no_verify, primal=primal)
        reports.append(price_response(report, arbitrage_bounds(claim, loaded.model)))
    falsified = any(r.definitional_passed is False for r in reports)
    _emit(args, {"model": loaded.name, "prices": [r.model_dump() for r in reports]})
    return EXIT_FALSIFIED if falsified else EXIT_OK


def _random_claim_suite(loaded: LoadedModel, scenarios, count: int, seed: int) -> Dict[str, object]:
    rng = np.random.default_rng(seed)
    pairs = random_replicable_claims(loaded.model, count, rng)
    table = invariance_table([claim for claim, _ in pairs], scenarios, loaded.model)
    columns = [s.name for s in scenarios]
    worst = 0.0
    for (claim, cost) in pairs:
        prices = table.loc[claim.name, columns].to_numpy(dtype=float)
        worst = max(worst, float(np.max(np.abs(prices - cost))))
    return {
        "count": count,
        "seed": seed,
        "max_price_error": worst,
        "passed": worst <= REPLICATION_PRICE_TOLERANCE,
    }


def cmd_invariance(args) -> int:
    loaded = load_model_file(args.model)
    scenarios = loaded.scenario_set(args.scenario_set)
    set_name = args.scenario_set or next(iter(loaded.scenarios))
    names = args.claim or list(loaded.claims)
    claims = [loaded.claim(name) for name in names]
    table = invariance_table(claims, scenarios, loaded.model, tolerance=args.tolerance)
    subspace = invariant_claim_basis(loaded.model, scenarios, strict=False)
    suite = None
    if args.random_claims:
        suite = _random_claim_suite(loaded, scenarios, args.random_claims, args.seed)
    witness = None
    if args.witness:
        if is_complete(loaded.model):
            witness = {"available": False}
        else:
            found = non_invariance_witness(loaded.model, loaded.P)
            witness = {
                "available": True,
                "alpha": found.alpha,
                "claim": found.claim.as_dict(),
                "price_base": found.price_base,
                "price_wrapped": found.price_wrapped,
                "difference": found.difference,
            }
    records = frame_records(table.reset_index())
    report = InvarianceResponse(
        model=loaded.name,
        scenario_set=set_name,
        scenarios=[s.name for s in scenarios],
        tolerance=settings.INVARIANCE_TOLERANCE if args.tolerance is None else args.tolerance,
        claims=records,
        invariant_basis=subspace.basis.tolist(),
        replicable_dimension=subspace.replicable_dimension,
        inconclusive=subspace.inconclusive,
        random_claims=suite,
        passed=suite is None or bool(suite["passed"]),
    ).model_dump()
    if witness is not None:
        report["witness"] = witness
    _emit(args, report, frame=table.reset_index())
    return EXIT_OK if report["passed"] else EXIT_FALSIFIED


def cmd_weakinfo(args) -> int:
    loaded = load_model_file(args.model)
    if loaded.weak_info is None:
        raise ValueError(f"model {loaded.name!r} has no weak_info block")
    setup = loaded.weak_info
    U = _utility(loaded, args.utility)
    x = args.x if args.x is not None else setup.x
    nu = _parse_law(args.nu) if args.nu else setup.nu
    model, P, Y = loaded.model, loaded.P, setup.Y
    informed = minimal_measure(P, Y, nu)
    complete = is_complete(model)
    value_prior = value_informed = gain = None
    if complete:
        value_prior = solve_primal(model, U, P, x).value
        value_informed = value_of_weak_information(model, U, x, Y, nu, P)
        gain = certainty_equivalent_gain(model, U, x, Y, nu, P)
    else:
        logger.info("model %s is incomplete: reporting price impact only", loaded.name)
    impact = information_price_impact(model, U, x, Y, nu, P, loaded.claims)
    report = WeakInfoResponse(
        model=loaded.name,
        utility=U.name,
        x=x,
        law=nu.as_dict(),
        prior_law=law_of(Y, P).as_dict(),
        minimal_measure=informed.as_dict(),
        value_prior=value_prior,
        value_informed=value_informed,
        certainty_equivalent=gain,
        complete=complete,
        price_impact=[
            {"claim": v.claim, "price_prior": v.price_prior, "price_informed": v.price_informed, "difference": v.difference}
            for v in impact
        ],
    )
    _emit(args, report)
    return EXIT_OK


def _convergence_series(report: ConvergenceReport) -> Dict[str, Tuple[List[float], List[float]]]:
    series = {name: (report.n_values, report.gaps[name]) for name in report.computed_columns}
    series["tv"] = (report.n_values, report.tv)
    return series


def _run_experiment(loaded: LoadedModel, args) -> ConvergenceReport:
    block = loaded.spec.stability
    perturbation = loaded.measure(block.perturbation if block else "base")
    n_min = args.n_min or (block.n_min if block else 2)
    n_max = args.n_max or (block.n_max if block else 10000)
    count = args.count or (block.count if block else 13)
    x = args.x if args.x is not None else (block.x if block else 1.0)
    y = args.y if args.y is not None else (block.y if block else 1.0)
    n_values = log_spaced(n_min, n_max, count)
    U = _utility(loaded, args.utility)
    P, model = loaded.P, loaded.model
    sequence = mixture_sequence(P, perturbation, n_values)
    tolerance = args.tolerance

    if args.experiment == "value":
        return run_value_convergence(model, U, P, sequence, x, y, n_values=n_values, tolerance=tolerance)
    if args.experiment == "optimizer":
        x_sequence = [x * (1.0 + 1.0 / n) for n in n_values]
        return run_optimizer_convergence(model, U, P, sequence, x_sequence, x, n_values=n_values, tolerance=tolerance)
    if args.experiment == "price":
        name = args.claim[0] if args.claim else (block.claim if block and block.claim else next(iter(loaded.claims)))
        return run_price_convergence(
            model, U, sequence, x, loaded.claim(name),
            limit=(x, U, P), n_values=n_values, verify=not args.no_verify, tolerance=tolerance,
        )
    if loaded.weak_info is None:
        raise ValueError(f"model {loaded.name!r} has no weak_info block")
    setup = loaded.weak_info
    start = setup.nu_start or law_of(setup.Y, P)
    return run_weak_info_convergence(model, U, x, setup.Y, setup.nu, start, P, n_values, tolerance=tolerance)


def cmd_stability(args) -> int:
    loaded = load_model_file(args.model)
    if args.experiment == "two-factor":
        reference = two_factor_model()
        if loaded.space.outcomes != reference.space.outcomes:
            raise ValueError(f"two-factor experiment needs outcomes {list(reference.space.outcomes)}")
        p_w = [float(v) for v in args.p_w.split(",")]
        demo = two_factor_invariance_demo(p_w, model=loaded.model, tolerance=args.tolerance)
        report = {
            "model": loaded.name,
            "experiment": "two-factor",
            "target": demo.target,
            "spread": demo.spread,
            "tolerance": demo.tolerance,
            "rows": demo.rows,
            "passed": demo.passed,
        }
        _emit(args, report, frame=demo.to_frame())
        return EXIT_OK if demo.passed else EXIT_FALSIFIED

    result = _run_experiment(loaded, args)
    frame = result.to_frame()
    report = StabilityResponse(
        model=loaded.name,
        experiment=result.experiment,
        tolerance=result.tolerance,
        rows=frame_records(frame),
        verdicts=result.verdicts,
        monotone_tail=result.monotone_tail,
        diagnostics=result.diagnostics,
        failures=result.failures,
        passed=result.passed,
    )
    _emit(args, report, frame=frame, series=_convergence_series(result))
    if args.plot:
        save_convergence_plot(result, args.plot)
    return EXIT_OK if result.passed else EXIT_FALSIFIED


def cmd_counterexample(args) -> int:
    spec = load_counterexample_file(args.file)
    which = args.which or spec.which
    n = args.n or spec.n
    terms = args.terms or spec.terms
    demo = counterexample_truncation(which, n, grid_from_file(spec), terms=terms, p=spec.p, sharpe=spec.sharpe)
    report = CounterexampleResponse.model_validate(demo)
    _emit(args, report, frame=demo.to_frame(), series={"log_value": (demo.cutoffs, demo.log_values)})
    if args.plot:
        save_truncation_plot(demo, args.plot)
    return EXIT_OK if demo.verdict else EXIT_FALSIFIED


def build_parser() -> LabArgumentParser:
    common = LabArgumentParser(add_help=False)
    common.add_argument("--out", help="JSON report path (default: stdout)")
    common.add_argument("--csv", help="CSV table path")
    common.add_argument("--plot-data", dest="plot_data", help="two-column plot series path")
    common.add_argument("--log-level", dest="log_level", help="error | info | debug (default: WEAKINFO_LOG)")

    scenario = LabArgumentParser(add_help=False)
    scenario.add_argument("model", help="market model JSON file")
    scenario.add_argument("--utility", help="log, sqrt or power:<p> (default: the model's utility)")
    scenario.add_argument("--measure", help="named measure of the model (default: the base measure)")
    scenario.add_argument("--claim", action="append", help="claim name (repeatable)")
    scenario.add_argument("--tolerance", type=float)

    parser = LabArgumentParser(prog="weakinfo", description="Weak-information indifference pricing laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

    p = sub.add_parser("validate", parents=[common], help="validate model or counterexample files")
    p.add_argument("files", nargs="+")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("solve", parents=[common, scenario], help="primal and dual solution")
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--y", type=float)
    p.add_argument("--dump-constraints", dest="dump_constraints", action="store_true")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("price", parents=[common, scenario], help="indifference prices of claims")
    p.add_argument("--x", type=float, default=1.0)
    p.add_argument("--numeraire", help="price in units of this asset")
    p.add_argument("--no-verify", dest="no_verify", action="store_true")
    p.set_defaults(handler=cmd_price)

    p = sub.add_parser("invariance", parents=[common, scenario], help="price invariance across a scenario set")
    p.add_argument("--scenario-set", dest="scenario_set")
    p.add_argument("--random-claims", dest="random_claims", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--witness", action="store_true", help="construct a non-invariant claim (incomplete models)")
    p.set_defaults(handler=cmd_invariance)

    p = sub.add_parser("weakinfo", parents=[common, scenario], help="value of weak information")
    p.add_argument("--x", type=float)
    p.add_argument("--nu", help="law override, e.g. up=0.6,down=0.4")
    p.set_defaults(handler=cmd_weakinfo)

    p = sub.add_parser("stability", parents=[common, scenario], help="convergence experiments")
    p.add_argument("--experiment", choices=EXPERIMENTS, default="value")
    p.add_argument("--n-min", dest="n_min", type=int)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--x", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--p-w", dest="p_w", default="0.3,0.5,0.7")
    p.add_argument("--no-verify", dest="no_verify", action="store_true")
    p.add_argument("--plot", help="plot path (.html for plotly, PNG otherwise)")
    p.set_defaults(handler=cmd_stability)

    p = sub.add_parser("counterexample", parents=[common], help="truncated counterexample quadrature")
    p.add_argument("file", help="counterexample JSON file")
    p.add_argument("--which", choices=("assumption_asUI1", "assumption_asUI"))
    p.add_argument("--n", type=int)
    p.add_argument("--terms", type=int)
    p.add_argument("--plot", help="plot path (.html for plotly, PNG otherwise)")
    p.set_defaults(handler=cmd_counterexample)

    return parser


def run(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None) -> int:
    """
    Parse arguments, dispatch the subcommand and map errors to exit codes.

    Returns:
        0 on success, 2 on validation errors, 3 on solver failures,
        4 on a falsified verdict, 64 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    except UsageError as error:
        print(f"weakinfo: error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as stop:
        return int(stop.code or 0)
    args.stdout = stdout
    try:
        configure_logging(args.log_level)
        return args.handler(args)
    except UsageError as error:
        print(f"weakinfo: error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (LabError, ValueError, FileNotFoundError) as error:
        code = exit_code_for(error)
        logger.error("%s: %s", type(error).__name__, error)
        return code
