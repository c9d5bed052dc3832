"""
Ligne de commande : approximation, recalage, distances, analyse du
dictionnaire, données synthétiques, balayages et classification.

Codes de sortie : 0 succès, 2 erreur de configuration ou d'argument,
3 erreur de données.
"""
import argparse
import logging
import math
import os
import sys
import time
from typing import Optional, Sequence

import pandas as pd

from analysis import OracleGrid, RhoGrid
from dictionary import CONFIG_KEYS, DictionaryConfig
from errors import ConfigError, SparseRegError
from geometry import GroupKind
from harness import (EXPERIMENTS, METHODS, OUTPUT_DIR, REGIMES, SPEC_KEYS, TransformRanges, load_config, load_spec,
                     make_ball_image, synth_transformed, write_csv)
from imaging import load_pgm, save_pgm
from registration import Objective, RefinementConfig
from services import AnalysisService, ApproximationService, DistanceService, ExperimentService, RegistrationService
from sparse import SparseApprox, synthesize

# Configuration
LOG_LEVEL = os.getenv("SPARSEREG_LOG_LEVEL", "INFO").upper()
SWEEPS = tuple(e for e in EXPERIMENTS if e != "classify")

logger = logging.getLogger(__name__)


# --- config plumbing --------------------------------------------------------------

def _file_mapping(path: Optional[str]) -> dict:
    if not path:
        return {}
    mapping = load_config(path)
    unknown = set(mapping) - CONFIG_KEYS - SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(sorted(map(str, unknown)))}")
    return mapping


def _dictionary_flags(args) -> dict:
    flags = {
        "group": args.group, "nu": args.nu, "width": args.width, "height": args.height,
        "scale_octaves": args.scale_octaves, "max_scale": args.max_scale,
        "mother": args.mother, "box_length": args.box_length,
    }
    return {k: v for k, v in flags.items() if v is not None}


def dictionary_config(args) -> DictionaryConfig:
    """Dictionary keys of --config, then the dictionary flags on top."""
    mapping = {k: v for k, v in _file_mapping(args.config).items() if k in CONFIG_KEYS}
    mapping.update(_dictionary_flags(args))
    return DictionaryConfig.from_mapping(mapping)


def _emit(frame: pd.DataFrame, output: Optional[str], experiment: str):
    if output:
        write_csv(frame, output, experiment)
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.10g", lineterminator="\n")


def _refinement(args) -> RefinementConfig:
    if getattr(args, "max_iters", None) is None:
        return RefinementConfig()
    return RefinementConfig(max_iters=args.max_iters)


# --- subcommands ------------------------------------------------------------------

def cmd_approximate(args) -> int:
    img = load_pgm(args.image)
    cfg = dictionary_config(args)
    approx, trace = ApproximationService(cfg).approximate(img, args.K, args.stop_threshold)
    out = args.output or os.path.join(OUTPUT_DIR, os.path.splitext(os.path.basename(args.image))[0] + ".csv")
    approx.save_csv(out)
    recon = args.reconstruction or os.path.splitext(out)[0] + "_recon.pgm"
    save_pgm(synthesize(approx), recon)
    print(f"✅ {len(approx)} atoms, ||r|| {trace[0]:.6g} -> {trace[-1]:.6g}")
    print(f"   atoms: {out}")
    print(f"   reconstruction: {recon}")
    return 0


def cmd_register(args) -> int:
    cfg = dictionary_config(args)
    p = SparseApprox.load_csv(args.p, cfg)
    q = SparseApprox.load_csv(args.q, cfg)
    result = RegistrationService(_refinement(args)).register(p, q, args.refine, Objective(args.objective))
    print(f"eta_hat {result.eta_hat.to_text()}")
    print(f"d_a {result.d_a:.10g}")
    if result.refined:
        print(f"eta_refined {result.eta_refined.to_text()}")
        print(f"d_refined {result.d_refined:.10g}")
    if args.candidates:
        write_csv(result.to_frame(), args.candidates, "candidates")
    return 0


def cmd_distance(args) -> int:
    img1, img2 = load_pgm(args.image1), load_pgm(args.image2)
    cfg = dictionary_config(args)
    service = DistanceService(cfg, _refinement(args))
    rows = []
    for method in args.method:
        start = time.time()
        d, eta = service.distance(img1, img2, method, args.K, args.refine, Objective(args.objective))
        rows.append({"method": method, "image1": args.image1, "image2": args.image2, "distance": d,
                     "eta": eta.to_text() if eta is not None else "", "seconds": time.time() - start})
    _emit(pd.DataFrame(rows), args.output, "distance")
    return 0


def _experiment_overrides(args) -> dict:
    overrides = _dictionary_flags(args)
    overrides.update({
        "K": args.K, "trials": args.trials, "seed": args.seed, "output": args.output,
        "data_dir": args.data_dir, "refine": args.refine, "max_iters": args.max_iters,
        "objective": args.objective,
        "full_scale": True if args.full_scale else None,
    })
    return overrides


def _run_spec(spec) -> int:
    frame = ExperimentService().run(spec)
    if not spec.output:
        write_csv(frame, os.path.join(OUTPUT_DIR, f"{spec.experiment}.csv"), spec.experiment)
    print(frame.to_string(index=False))
    return 0


def cmd_classify(args) -> int:
    _file_mapping(args.config)
    overrides = _experiment_overrides(args)
    overrides.update({
        "experiment": "classify", "methods": args.methods, "regimes": args.regimes, "k_values": args.k_values,
        "train_per_class": args.train_per_class, "test_per_class": args.test_per_class,
        "digit_max_translation": args.digit_max_translation, "digit_scale_min": args.digit_scale_min,
        "digit_scale_max": args.digit_scale_max,
    })
    return _run_spec(load_spec(args.config, **overrides))


def cmd_sweep(args) -> int:
    _file_mapping(args.config)
    overrides = _experiment_overrides(args)
    overrides.update({"experiment": args.experiment, "nu_values": args.nu_values, "k_values": args.k_values,
                      "methods": args.methods})
    return _run_spec(load_spec(args.config, **overrides))


def cmd_synth(args) -> int:
    if args.image:
        img = load_pgm(args.image)
    else:
        img = make_ball_image(args.width or 75, args.height or 75)
    kind = GroupKind.parse(args.group or "sim2")
    ranges = TransformRanges(args.max_translation, args.scale_min, args.scale_max, args.rotation_max)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for k, (warped, eta) in enumerate(synth_transformed(img, args.n, ranges, args.seed, kind)):
        path = os.path.join(args.out_dir, f"synth_{k:04d}.pgm")
        save_pgm(warped, path)
        rows.append({"file": os.path.basename(path), "eta": eta.to_text()})
    write_csv(pd.DataFrame(rows, columns=["file", "eta"]), os.path.join(args.out_dir, "params.csv"), "synth")
    print(f"✅ {len(rows)} images in {args.out_dir}")
    return 0


def cmd_analyze(args) -> int:
    cfg = dictionary_config(args)
    service = AnalysisService()
    if args.what == "rho":
        grid = RhoGrid(gamma_radius=args.gamma_radius) if args.gamma_radius is not None else None
        if args.nu_values:
            frame = service.rho_sweep(cfg, args.nu_values, grid, not args.no_local)
        else:
            frame = service.rho(cfg, grid, not args.no_local)
    elif args.what == "rli":
        frame = service.rli(cfg, args.K, args.epsilon, args.alpha, args.trials, args.seed)
    elif args.what == "coherence":
        frame = service.coherence(cfg, args.K)
    else:
        if not (args.p and args.q):
            raise ConfigError("analyze bound needs --p and --q")
        p = SparseApprox.load_csv(args.p, cfg)
        q = SparseApprox.load_csv(args.q, cfg)
        rho_grid = None
        if args.dictionary_rho:
            rho_grid = RhoGrid(gamma_radius=args.gamma_radius) if args.gamma_radius is not None else RhoGrid()
        frame = pd.DataFrame([service.bound(p, q, OracleGrid(), rho_grid)])
    _emit(frame, args.output, f"analyze_{args.what}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from main import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# --- parser -------------------------------------------------------------------------

def _add_dictionary_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("dictionary")
    g.add_argument("--group", help="translation, se2 or sim2")
    g.add_argument("--nu", type=float, help="anisotropy of the Gaussian mother function")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--scale-octaves", type=float, help="scale step, in octaves")
    g.add_argument("--max-scale", type=float)
    g.add_argument("--mother", choices=["gaussian", "box"])
    g.add_argument("--box-length", type=int)


def _add_experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--K", type=int)
    p.add_argument("--k-values", type=int, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", help="directory with MNIST IDX files or object PGMs")
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--objective", choices=[o.value for o in Objective])
    p.add_argument("--output", help="CSV path (default: <output dir>/<experiment>.csv)")
    p.add_argument("--full-scale", action="store_true",
                   help="100 trials, 100 train / 100 test per class, digits moved up to half their size "
                        "and scaled in [0.5, 1.5]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsereg",
                                     description="Registration of sparse images in parametric geometric dictionaries")
    parser.add_argument("--config", help="flat key: value config file")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", help="NMP approximation of a PGM image")
    p.add_argument("image")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--stop-threshold", type=float, default=0.0, help="stop once ||r|| <= threshold")
    p.add_argument("--output", help="atoms CSV")
    p.add_argument("--reconstruction", help="reconstruction PGM")
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("register", help="register two sparse patterns given as CSV")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--objective", choices=[o.value for o in Objective], default=Objective.PLANE.value)
    p.add_argument("--candidates", help="per-candidate diagnostics CSV")
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("distance", help="distance between two PGM images")
    p.add_argument("image1")
    p.add_argument("image2")
    p.add_argument("--method", nargs="+", choices=METHODS, default=["sparse"])
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--objective", choices=[o.value for o in Objective], default=Objective.RASTER.value)
    p.add_argument("--output")
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("classify", help="nearest-neighbour digit classification")
    _add_experiment_args(p)
    p.add_argument("--regimes", nargs="+", choices=REGIMES)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--digit-max-translation", type=float, help="pixels, at most half the digit size")
    p.add_argument("--digit-scale-min", type=float)
    p.add_argument("--digit-scale-max", type=float)
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="run one experiment driver")
    p.add_argument("experiment", choices=SWEEPS)
    _add_experiment_args(p)
    p.add_argument("--nu-values", type=float, nargs="+")
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="randomly transformed copies of an image")
    p.add_argument("--image", help="source PGM (default: a synthetic ball)")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=os.path.join(OUTPUT_DIR, "synth"))
    p.add_argument("--max-translation", type=float, default=8.0)
    p.add_argument("--scale-min", type=float, default=0.5)
    p.add_argument("--scale-max", type=float, default=1.5)
    p.add_argument("--rotation-max", type=float, default=math.pi)
    p.add_argument("--group")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="dictionary diagnostics")
    p.add_argument("what", choices=["rho", "rli", "coherence", "bound"])
    p.add_argument("--K", type=int)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, help="default: analytic constant of box dictionaries")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nu-values", type=float, nargs="+")
    p.add_argument("--gamma-radius", type=float)
    p.add_argument("--no-local", action="store_true", help="skip the Nelder-Mead polish of rho")
    p.add_argument("--dictionary-rho", action="store_true",
                   help="bound: also report the bound with the dictionary-wide rho estimate")
    p.add_argument("--p")
    p.add_argument("--q")
    p.add_argument("--output")
    _add_dictionary_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="start the HTTP server")
    p.add_argument("--host", default=os.getenv("SPARSEREG_HOST", "0.0.0.0"))
    p.add_argument("--port", type=int, default=int(os.getenv("SPARSEREG_PORT", "8003")))
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL)
    if args.command == "analyze" and args.what == "rli" and args.K is None:
        parser.error("analyze rli needs --K")
    start = time.time()
    try:
        code = args.func(args)
    except SparseRegError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    logger.info(f"⏱️ {args.command}: {time.time() - start:.2f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
