"""Full pipeline orchestration: validate -> solve -> price -> invariance -> weak information."""
import logging
from pathlib import Path
from typing import Optional, Union

from app.config import configure_logging
from app.duality import solve_primal
from app.ingestion import load_model_file
from app.market import is_complete
from app.pricing import indifference_price, invariance_table, invariant_claim_basis
from app.preferences import parse_utility
from app.reporting import frame_records
from app.weak_info import certainty_equivalent_gain, information_price_impact, value_of_weak_information

logger = logging.getLogger(__name__)


def run_full_pipeline(
    model_path: Union[str, Path],
    x: Optional[float] = None,
    utility: Optional[str] = None,
) -> dict:
    """
    Run the complete pipeline on one model file.

    Args:
        model_path: Market model JSON file
        x: Initial wealth (default: 1, or the weak_info block's x for that step)
        utility: Utility override such as "log" or "power:0.5" (default: the model's)

    Returns:
        Dictionary with pipeline execution results
    """
    results = {
        'status': 'success',
        'model': str(model_path),
        'validation': {},
        'solve': {},
        'prices': {},
        'invariance': {},
        'weak_info': {},
        'errors': []
    }

    # Step 1: Validate; nothing else can run without a model
    try:
        loaded = load_model_file(model_path)
        U = loaded.utility if utility is None else parse_utility(loaded.space, utility)
        wealth = 1.0 if x is None else float(x)
        results['validation'] = {
            'name': loaded.name,
            'outcomes': loaded.space.size,
            'assets': loaded.model.n_assets,
            'complete': is_complete(loaded.model),
        }
    except Exception as e:
        results['status'] = 'error'
        results['errors'].append(f"Validation error: {str(e)}")
        results['validation'] = {'error': str(e)}
        return results

    # Step 2: Solve the primal and dual problems
    primal = None
    try:
        primal = solve_primal(loaded.model, U, loaded.P, wealth)
        results['solve'] = {
            'x': wealth,
            'utility': U.name,
            'value': primal.value,
            'y_star': primal.y_star,
            'terminal_wealth': primal.wealth_map(),
            'q_hat': primal.dual.q_hat.as_dict(),
        }
    except Exception as e:
        results['errors'].append(f"Solve error: {str(e)}")
        results['solve'] = {'error': str(e)}

    # Step 3: Price every claim
    for name, claim in loaded.claims.items():
        try:
            report = indifference_price(loaded.model, U, loaded.P, wealth, claim, primal=primal)
            results['prices'][name] = {
                'price': report.price,
                'definitional_check': report.definitional_check,
                'martingale_certificate': report.martingale_certificate,
            }
        except Exception as e:
            results['errors'].append(f"Pricing error ({name}): {str(e)}")
            results['prices'][name] = {'error': str(e)}

    # Step 4: Invariance table over the first scenario set
    if loaded.scenarios and loaded.claims:
        try:
            scenarios = loaded.scenario_set()
            table = invariance_table(loaded.claims, scenarios, loaded.model)
            subspace = invariant_claim_basis(loaded.model, scenarios, strict=False)
            results['invariance'] = {
                'scenarios': [s.name for s in scenarios],
                'table': frame_records(table.reset_index()),
                'invariant_dimension': subspace.dimension,
                'replicable_dimension': subspace.replicable_dimension,
                'inconclusive': subspace.inconclusive,
            }
        except Exception as e:
            results['errors'].append(f"Invariance error: {str(e)}")
            results['invariance'] = {'error': str(e)}

    # Step 5: Weak information, if the model defines it
    if loaded.weak_info is not None:
        try:
            setup = loaded.weak_info
            x_info = setup.x if x is None else wealth
            step = {'law': setup.nu.as_dict()}
            if results['validation']['complete']:
                step['value_informed'] = value_of_weak_information(loaded.model, U, x_info, setup.Y, setup.nu, loaded.P)
                step['certainty_equivalent'] = certainty_equivalent_gain(
                    loaded.model, U, x_info, setup.Y, setup.nu, loaded.P
                )
            impact = information_price_impact(loaded.model, U, x_info, setup.Y, setup.nu, loaded.P, loaded.claims)
            step['price_impact'] = {v.claim: v.difference for v in impact}
            results['weak_info'] = step
        except Exception as e:
            results['errors'].append(f"Weak information error: {str(e)}")
            results['weak_info'] = {'error': str(e)}

    if results['errors']:
        results['status'] = 'partial_success'
    logger.info("pipeline on %s finished with status %s", model_path, results['status'])
    return results


if __name__ == "__main__":
    """CLI entrypoint for running the pipeline."""
    import sys

    from app.reporting import write_json

    if len(sys.argv) < 2:
        print("usage: python -m app.pipeline.run_full MODEL.json [--x=X] [--utility=U]", file=sys.stderr)
        sys.exit(64)

    x = None
    utility = None
    for arg in sys.argv[2:]:
        if arg.startswith('--x='):
            x = float(arg.split('=')[1])
        elif arg.startswith('--utility='):
            utility = arg.split('=', 1)[1]

    configure_logging()
    results = run_full_pipeline(sys.argv[1], x=x, utility=utility)
    write_json(results)
    sys.exit(0 if results['status'] == 'success' else 1)
