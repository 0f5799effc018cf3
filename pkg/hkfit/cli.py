"""
Command line interface for hkfit

Subcommands:
    fit             fit an estimator to x1..xd,y data and write a model JSON
    predict         evaluate a model JSON at x1..xd points
    variation       HK0 variation, EM flag and EM decomposition of a model
    design          inspect the design matrix of a point set
    simulate        run a figure or risk-experiment preset (or an ad hoc experiment)
    current-status  bivariate current status study

Results are printed to stdout as JSON; failures print
{"error": ..., "status": "failed"} to stderr. Exit codes: 0 success,
2 bad input, 3 solver did not converge (outputs still written).
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from hkfit import config as settings_module
from hkfit.design import build_design, vc_bound
from hkfit.errors import HKFitError, InvalidParameterError
from hkfit.estimators import EstimatorKind, fit, predict
from hkfit.serialization import (
    load_model,
    predictions_frame,
    read_design_csv,
    save_model,
    write_anchors_csv,
    write_json,
    write_predictions_csv,
    write_risk_csv,
    write_slopes_json,
    write_surface_csv,
)
from hkfit.sim import (
    ExperimentSpec,
    TestFunction,
    VPolicy,
    run_current_status,
    run_figure,
    run_risk_experiment,
    trial_seed,
)
from hkfit.variation import em_decompose, fn_is_entirely_monotone, hk0_variation_coeffs, hk0_variation_full

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3

# --full evaluates every face of the cube; skip it for large models
FULL_VARIATION_MAX_ANCHORS = 2000


def parse_grid(text: str):
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like n1,n2,..., got '{text}'")
    if not dims or any(n_j < 1 for n_j in dims):
        raise argparse.ArgumentTypeError(f"grid dimensions must be positive, got '{text}'")
    return dims


def _emit(result: Dict[str, Any]):
    print(json.dumps(result))


def _fail(message: str) -> int:
    print(json.dumps({"error": message, "status": "failed"}), file=sys.stderr)
    return EXIT_INPUT


def _solver_cfg(args, settings, preset: Optional[Dict[str, Any]] = None):
    overrides = dict((preset or {}).get("solver", {}))
    if getattr(args, "tol", None) is not None:
        overrides["kkt_tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        overrides["max_iter"] = args.max_iter
    return settings_module.solver_config(settings, **overrides)


def cmd_fit(args, settings) -> int:
    kind = EstimatorKind(args.estimator)
    if kind is not EstimatorKind.EM and args.V is None:
        raise InvalidParameterError(f"--V is required for --estimator {kind.value}")
    cfg = _solver_cfg(args, settings)
    xs, y = read_design_csv(args.input, require_y=True)
    design = build_design(xs, strategy=args.strategy, **settings["design"])
    model = fit(kind, xs, y, V=args.V, cfg=cfg, design=design)
    save_model(args.output, model)
    _emit({
        "n": model.diagnostics["n"],
        "p": model.diagnostics["p"],
        "objective": model.diagnostics["objective"],
        "kkt_residual": model.diagnostics["kkt_residual"],
        "iterations": model.diagnostics["iterations"],
        "converged": model.converged,
        "V_HK0": model.variation,
        "model": args.output,
    })
    return EXIT_OK if model.converged else EXIT_NOT_CONVERGED


def cmd_predict(args, settings) -> int:
    model = load_model(args.model)
    xs, _ = read_design_csv(args.input)
    if xs.shape[1] != model.fn.d:
        raise InvalidParameterError(f"points have d={xs.shape[1]} but the model has d={model.fn.d}")
    yhat = predict(model, xs, clamp=args.clamp)
    if args.out:
        write_predictions_csv(args.out, xs, yhat)
        _emit({"n": int(xs.shape[0]), "out": args.out})
    else:
        predictions_frame(xs, yhat).to_csv(sys.stdout, index=False)
    return EXIT_OK


def cmd_variation(args, settings) -> int:
    model = load_model(args.model)
    tol = args.tol if args.tol is not None else float(settings["monotonicity_tol"])
    f_plus, f_minus = em_decompose(model.fn)
    result = {
        "V_HK0": hk0_variation_coeffs(model.fn),
        "entirely_monotone": fn_is_entirely_monotone(model.fn, tol),
        "V_plus": hk0_variation_coeffs(f_plus),
        "V_minus": hk0_variation_coeffs(f_minus),
    }
    if args.full:
        if model.fn.p > FULL_VARIATION_MAX_ANCHORS:
            logger.warning(f"--full skipped: {model.fn.p} anchors exceeds {FULL_VARIATION_MAX_ANCHORS}")
            result["V_HK0_full"] = None
        else:
            result["V_HK0_full"] = hk0_variation_full(model.fn)
    _emit(result)
    return EXIT_OK


def cmd_design(args, settings) -> int:
    xs, _ = read_design_csv(args.input)
    design = build_design(xs, strategy=args.strategy, **settings["design"])
    n, d = xs.shape
    try:
        bound = vc_bound(n, d)
    except OverflowError:
        bound = None
    if args.out:
        write_anchors_csv(args.out, design.anchors)
    _emit({
        "n": n,
        "d": d,
        "p": design.n_cols,
        "vc_bound": bound,
        "backend": design.backend.value,
        "anchors": args.out,
    })
    return EXIT_OK


def _run_figure_preset(args, settings, name: str, preset: Dict[str, Any]) -> int:
    cfg = _solver_cfg(args, settings, preset)
    result = run_figure(preset, seed=args.seed, cfg=cfg)
    surface_path = os.path.join(args.out, f"{name}_surface.csv")
    losses_path = os.path.join(args.out, f"{name}_losses.json")
    write_surface_csv(surface_path, result)
    converged = all(model.converged for model in result.fits.values())
    write_json(losses_path, {"losses": result.losses, "converged": converged})
    _emit({"preset": name, "losses": result.losses, "surface": surface_path, "converged": converged})
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def _experiment_from_args(args, settings) -> ExperimentSpec:
    if not args.function or not args.grid:
        raise InvalidParameterError("simulate needs --preset, or --function with at least one --grid")
    explicit = args.V is not None
    return ExperimentSpec(
        function=TestFunction.from_name(args.function, d=len(args.grid[0])),
        grids=args.grid,
        sigma=args.sigma if args.sigma is not None else 1.0,
        trials=args.trials if args.trials is not None else 1,
        v_policy=VPolicy.EXPLICIT if explicit else VPolicy.ORACLE,
        v_value=args.V if explicit else 1.0,
        seed=args.seed if args.seed is not None else 0,
        estimator=args.estimator or "hk",
        solver=_solver_cfg(args, settings),
    )


# simulate flags each preset kind does not read
UNUSED_PRESET_FLAGS = {
    "figure": ("function", "grid", "sigma", "trials", "estimator", "V", "clamp", "n"),
    "current-status": ("function", "grid", "sigma", "trials", "estimator", "V"),
    "risk": ("function", "clamp", "n"),
}


def _reject_unused_flags(args, kind: str) -> None:
    given = [name for name in UNUSED_PRESET_FLAGS.get(kind, ()) if getattr(args, name, None) not in (None, False)]
    if given:
        flags = ", ".join(f"--{name}" for name in given)
        raise InvalidParameterError(f"{flags} cannot be used with a {kind} preset")


def cmd_simulate(args, settings) -> int:
    name = args.preset or "experiment"
    if args.preset:
        preset = settings_module.get_preset(args.preset, settings)
        kind = preset.get("kind", "risk")
        _reject_unused_flags(args, kind)
        if kind == "figure":
            return _run_figure_preset(args, settings, name, preset)
        if kind == "current-status":
            return cmd_current_status(args, settings)
        for key in ("sigma", "trials", "estimator"):
            if getattr(args, key, None) is not None:
                preset[key] = getattr(args, key)
        if args.grid:
            preset["grids"] = [list(g) for g in args.grid]
        if args.V is not None:
            preset["v_policy"], preset["v_value"] = "explicit", args.V
        spec = ExperimentSpec.from_preset(preset, solver=_solver_cfg(args, settings, preset), seed=args.seed)
    else:
        spec = _experiment_from_args(args, settings)

    report = run_risk_experiment(spec, threads=settings_module.trial_threads(settings))
    risk_path = os.path.join(args.out, f"{name}_risk.csv")
    slopes_path = os.path.join(args.out, f"{name}_slopes.json")
    write_risk_csv(risk_path, report)
    write_slopes_json(slopes_path, report)
    _emit({
        "preset": name,
        "V": report.V,
        "slopes": report.slopes_dict(),
        "risk": risk_path,
        "excluded": sum(g.excluded for g in report.grids),
    })
    return EXIT_OK


def cmd_current_status(args, settings) -> int:
    preset = settings_module.get_preset(args.preset or "current-status", settings)
    n = args.n if getattr(args, "n", None) is not None else int(preset.get("n", 500))
    seed = args.seed if args.seed is not None else int(preset.get("seed", 0))
    clamp = bool(args.clamp or preset.get("clamp", False))
    cfg = _solver_cfg(args, settings, preset)
    rng = np.random.default_rng(trial_seed(seed, 0, 0))
    result = run_current_status(n, rng, clamp=clamp, cfg=cfg)
    model_path = os.path.join(args.out, "current_status_model.json")
    summary_path = os.path.join(args.out, "current_status_summary.json")
    save_model(model_path, result.model)
    summary = result.summary()
    write_json(summary_path, summary)
    summary["model"] = model_path
    _emit(summary)
    return EXIT_OK if result.model.converged else EXIT_NOT_CONVERGED


def _add_solver_flags(parser):
    parser.add_argument("--tol", type=float, help="KKT tolerance of the solver")
    parser.add_argument("--max-iter", type=int, help="Iteration cap of the solver")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Entirely monotone and Hardy-Krause variation regression")
    parser.add_argument("--config", help="Settings YAML (default: packaged hkfit_config.yaml)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    strategies = ["auto", "lattice", "naive", "componentwise-min", "induced-grid"]
    estimators = [kind.value for kind in EstimatorKind]

    fit_parser = subparsers.add_parser("fit", help="Fit an estimator to a CSV with header x1..xd,y")
    fit_parser.add_argument("input", help="Data CSV")
    fit_parser.add_argument("output", help="Model JSON to write")
    fit_parser.add_argument("--estimator", choices=estimators, default="em", help="Estimator (default: em)")
    fit_parser.add_argument("--V", type=float, help="Variation bound (hk, em-capped)")
    fit_parser.add_argument("--strategy", choices=strategies, default="auto", help="Design construction")
    _add_solver_flags(fit_parser)

    predict_parser = subparsers.add_parser("predict", help="Evaluate a model at the points of a CSV")
    predict_parser.add_argument("model", help="Model JSON")
    predict_parser.add_argument("input", help="Points CSV with header x1..xd")
    predict_parser.add_argument("--out", help="Predictions CSV (default: stdout)")
    predict_parser.add_argument("--clamp", action="store_true", help="Truncate predictions to [0, 1]")

    variation_parser = subparsers.add_parser("variation", help="HK0 variation and EM decomposition of a model")
    variation_parser.add_argument("model", help="Model JSON")
    variation_parser.add_argument("--full", action="store_true", help="Also sum Vitali variations face by face")
    variation_parser.add_argument("--tol", type=float, help="Tolerance for the EM certificate")

    design_parser = subparsers.add_parser("design", help="Build the design matrix of a point set")
    design_parser.add_argument("input", help="Points CSV with header x1..xd")
    design_parser.add_argument("--strategy", choices=strategies, default="auto", help="Design construction")
    design_parser.add_argument("--out", help="Anchors CSV to write")

    simulate_parser = subparsers.add_parser("simulate", help="Run an experiment preset or an ad hoc risk experiment")
    simulate_parser.add_argument("--preset", help="Preset name (fig1..fig5, checkered, current-status)")
    simulate_parser.add_argument("--function", help="Test function for an ad hoc experiment")
    simulate_parser.add_argument("--grid", type=parse_grid, action="append", help="Lattice n1,n2,... (repeatable)")
    simulate_parser.add_argument("--sigma", type=float, help="Noise level")
    simulate_parser.add_argument("--trials", type=int, help="Trials per grid")
    simulate_parser.add_argument("--estimator", choices=estimators, help="Estimator (default: hk)")
    simulate_parser.add_argument("--V", type=float, help="Explicit variation bound (default: V*)")
    simulate_parser.add_argument("--seed", type=int, help="Experiment seed")
    simulate_parser.add_argument("--clamp", action="store_true", help="Truncate current status predictions")
    simulate_parser.add_argument("--n", type=int, help="Sample size (current-status preset)")
    simulate_parser.add_argument("--out", default="hkfit_output", help="Output directory")
    _add_solver_flags(simulate_parser)

    status_parser = subparsers.add_parser("current-status", help="Bivariate current status study")
    status_parser.add_argument("--n", type=int, help="Number of observations (default from preset)")
    status_parser.add_argument("--seed", type=int, help="Seed")
    status_parser.add_argument("--clamp", action="store_true", help="Truncate predictions to [0, 1]")
    status_parser.add_argument("--preset", help="Preset name (default: current-status)")
    status_parser.add_argument("--out", default="hkfit_output", help="Output directory")
    _add_solver_flags(status_parser)

    return parser


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "variation": cmd_variation,
    "design": cmd_design,
    "simulate": cmd_simulate,
    "current-status": cmd_current_status,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if args.command not in COMMANDS:
        parser.print_help()
        return EXIT_INPUT

    try:
        settings = settings_module.load_settings(args.config)
        return COMMANDS[args.command](args, settings)
    except (HKFitError, ValueError, KeyError, OverflowError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return _fail(str(e))
