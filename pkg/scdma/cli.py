"""
Command-line entry point.

    python -m scdma <subcommand> [options]

Exit codes: 0 success, 2 usage error, 3 invalid input, 4 enumeration limit.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from scdma import __version__
from scdma.config import config
from scdma.design import construction_1, construction_2, latin_baseline, optimize, tree_code
from scdma.detect import DETECTORS, Observation, detect
from scdma.distance import (
    distance_enumerator,
    lower_bound_regular,
    min_distance,
    union_bound,
    upper_bound_spreading,
)
from scdma.errors import EnumerationLimitError, InvalidInputError
from scdma.graph import FactorGraph, degree_profile
from scdma.presets import family_parameters, get_preset, list_presets
from scdma.sim import eb_n0_to_n0, parse_grid, run_wer
from scdma.signature import SignatureMatrix, parse_angle

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 3
EXIT_LIMIT = 4

# (family, K, q) -> preset reproduced by --preset paper
_PUBLISHED_FAMILIES = {
    ("c1", 3, 2): "c1_4x6",
    ("c1", 4, 2): "c1_6x8",
    ("c2", 4, 2): "c2_4x8",
}


class RunConfig(BaseModel):
    subcommand: str
    matrix: Optional[str] = None
    graph: Optional[str] = None
    samples: Optional[str] = None
    out: Optional[str] = None
    seed: Optional[int] = None
    budget: Optional[int] = None
    ebn0: Optional[List[float]] = None
    detector: Optional[str] = None
    iterations: Optional[int] = None
    trials: Optional[int] = None
    threads: int
    settings: dict

    def check_paths(self) -> None:
        for name in ("matrix", "graph", "samples"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise InvalidInputError(f"cli: --{name} file {value} not found")
        if self.out is not None and not Path(self.out).resolve().parent.is_dir():
            raise InvalidInputError(f"cli: output directory for {self.out} does not exist")


def _angles(text: Optional[str], name: str):
    """JSON list (possibly nested) of angles; strings such as "pi/6" are allowed"""
    if text is None:
        return None
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        raise InvalidInputError(f"cli: --{name} must be a JSON list of angles") from None

    def convert(item):
        return [convert(i) for i in item] if isinstance(item, list) else parse_angle(item)

    return convert(data)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
        logger.info(f"Wrote {out}")
    else:
        print(text)


def _emit_frame(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False)
        logger.info(f"Wrote {len(frame)} row(s) to {out}")
    else:
        print(frame.to_csv(index=False), end="")


def _load_graph(args) -> FactorGraph:
    if args.graph:
        return FactorGraph.load(args.graph)
    if args.matrix:
        return SignatureMatrix.load(args.matrix).graph
    raise InvalidInputError("cli: give --graph or --matrix")


def cmd_construct(args) -> int:
    family = args.family
    if family == "tree":
        if args.users is None:
            raise InvalidInputError("cli: --users is required for the tree family")
        matrix = tree_code(args.users)
    elif family == "latin":
        matrix = latin_baseline(_load_graph(args), threads=args.threads).matrix
    elif args.preset == "paper":
        key = (family, args.users, args.q)
        if key not in _PUBLISHED_FAMILIES:
            known = ", ".join(f"{f} K={k} q={q}" for f, k, q in _PUBLISHED_FAMILIES)
            raise InvalidInputError(f"cli: no published instance for {family} K={args.users} q={args.q} ({known})")
        params = family_parameters(_PUBLISHED_FAMILIES[key])
        builder = construction_1 if family == "c1" else construction_2
        matrix = builder(**params)
    else:
        if args.users is None or args.q is None or args.v is None:
            raise InvalidInputError("cli: --users, --q and --v are required without --preset paper")
        v = _angles(args.v, "v")
        lead = _angles(args.lead, "lead")
        if family == "c1":
            matrix = construction_1(args.users, args.q, v, lead)
        else:
            matrix = construction_2(args.users, args.q, v, _angles(args.w, "w") or [], lead=lead)
    _emit(matrix.to_json(), args.out)
    return EXIT_OK


def cmd_optimize(args) -> int:
    graph = _load_graph(args)
    warm = [SignatureMatrix.load(args.matrix)] if args.matrix and args.graph else []
    result = optimize(graph, budget=args.budget, seed=args.seed, warm_starts=warm,
                      use_presets=not args.no_presets, threads=args.threads)
    _emit(result.matrix.to_json(), args.out)
    print(f"d_min = {result.d_min:.{args.digits}f}", file=sys.stderr)
    print(result.matrix.pretty(), file=sys.stderr)
    print(f"evaluations = {result.search_log.evaluations}", file=sys.stderr)
    return EXIT_OK


def cmd_distance(args) -> int:
    matrix = SignatureMatrix.load(args.matrix)
    result = min_distance(matrix, args.threads)
    _emit(f"{result.d_min:.{args.digits}f}", args.out)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    enumerator = distance_enumerator(SignatureMatrix.load(args.matrix), args.threads)
    frame = pd.DataFrame(enumerator.to_records())
    frame["A_d"] = frame["num"] / frame["den"]
    _emit_frame(frame, args.out)
    return EXIT_OK


def cmd_bound(args) -> int:
    matrix = SignatureMatrix.load(args.matrix)
    grid = parse_grid(args.ebn0)
    n0 = [eb_n0_to_n0(matrix, g) for g in grid]
    bound = np.atleast_1d(union_bound(distance_enumerator(matrix, args.threads), n0))
    _emit_frame(pd.DataFrame({"eb_n0_db": grid, "n0": n0, "union_bound": bound}), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    matrix = SignatureMatrix.load(args.matrix)
    report = run_wer(matrix, args.detector, parse_grid(args.ebn0), trials=args.trials,
                     seed=args.seed, iterations=args.iters, early_stop=args.early_stop,
                     threads=args.threads)
    if args.out:
        report.write(args.out)
    else:
        print(report.to_frame().to_csv(index=False), end="")
    print(f"seed = {args.seed}", file=sys.stderr)
    return EXIT_OK


def cmd_detect(args) -> int:
    matrix = SignatureMatrix.load(args.matrix)
    try:
        samples = pd.read_csv(args.samples)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise InvalidInputError(f"cli: cannot parse samples file {args.samples}: {e}") from None
    columns = [(f"re_{n}", f"im_{n}") for n in range(matrix.n_rows)]
    missing = [c for pair in columns for c in pair if c not in samples.columns]
    if missing:
        raise InvalidInputError(f"cli: samples file lacks column(s) {', '.join(missing)}")
    y = np.stack([samples[re].to_numpy() + 1j * samples[im].to_numpy() for re, im in columns], axis=1)
    obs = Observation(y, complex(args.h), args.n0)
    decision = detect(args.detector, matrix, obs, args.iters, np.random.default_rng(args.seed))
    frame = pd.DataFrame(decision.indices, columns=[f"x_{k}" for k in range(matrix.n_cols)])
    frame["tie"] = decision.tie_flag
    _emit_frame(frame, args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    matrix = SignatureMatrix.load(args.matrix)
    graph = matrix.graph
    summary = {
        "shape": list(matrix.shape),
        "load": matrix.load_factor,
        "spreading_lengths": matrix.spreading_lengths.tolist(),
        "degrees": degree_profile(graph),
        "connected": graph.is_connected(),
        "tree": graph.is_tree(),
        "girth": graph.girth(),
        "cycles": {str(n): graph.count_cycles(n) for n in range(4, 2 * min(graph.n_code, graph.n_data) + 1, 2)},
        "d_min": min_distance(matrix, args.threads).d_min,
        "upper_bound": upper_bound_spreading(matrix),
    }
    if graph.is_connected():
        summary["phi"] = [list(e) for e in graph.spanning_tree_complement().sorted_edges()]
    if graph.regular_degree() is not None:
        try:
            summary["lower_bound_regular"] = lower_bound_regular(graph)
        except InvalidInputError as e:
            logger.debug(f"No regular lower bound: {e}")
    _emit(json.dumps(summary, indent=2), args.out)
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.name:
        _emit(get_preset(args.name).matrix.to_json(), args.out)
        return EXIT_OK
    rows = [
        {"name": p.name, "shape": f"{p.matrix.n_rows}x{p.matrix.n_cols}", "d_min": p.d_min,
         "description": p.description}
        for p in list_presets()
    ]
    _emit_frame(pd.DataFrame(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--threads", type=int, default=config.THREADS, help="worker threads")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="scdma", description="SCDMA signature design toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("construct", parents=[common], help="build a structured code")
    p.add_argument("--family", choices=("tree", "c1", "c2", "latin"), required=True)
    p.add_argument("--users", type=int, help="K: users (tree) or blocks (c1, c2)")
    p.add_argument("--q", type=int, help="block size")
    p.add_argument("--preset", choices=("paper",), help="use the published angles")
    p.add_argument("--v", help="JSON list of phase vectors")
    p.add_argument("--w", help="JSON list of loop phase vectors (c2)")
    p.add_argument("--lead", help="JSON phase vector of the first identity block")
    p.add_argument("--graph", help="graph JSON (latin)")
    p.add_argument("--matrix", help="matrix JSON whose graph is used (latin)")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("optimize", parents=[common], conflict_handler="resolve",
                       help="search the best labeling of a graph")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--graph", help="graph JSON")
    p.add_argument("--matrix", help="matrix JSON: its graph, or a warm start with --graph")
    p.add_argument("--budget", type=int, help="distance evaluations")
    p.add_argument("--no-presets", action="store_true", help="skip published warm starts")
    p.add_argument("--digits", type=int, default=4)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("distance", parents=[common], help="minimum distance")
    p.add_argument("--matrix", required=True)
    p.add_argument("--digits", type=int, default=4)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("enumerate", parents=[common], help="distance enumerator as CSV")
    p.add_argument("--matrix", required=True)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("bound", parents=[common], help="union bound over an Eb/N0 grid")
    p.add_argument("--matrix", required=True)
    p.add_argument("--ebn0", required=True, help="a:b:step or a,b,c (dB)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", parents=[common], conflict_handler="resolve",
                       help="Monte-Carlo error rates")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--matrix", required=True)
    p.add_argument("--detector", choices=DETECTORS, default="ml")
    p.add_argument("--iters", type=int, help="message-passing iterations")
    p.add_argument("--ebn0", required=True, help="a:b:step or a,b,c (dB)")
    p.add_argument("--trials", type=int, help="trials per point")
    p.add_argument("--early-stop", action="store_true", help=f"stop a point at {config.EARLY_STOP_ERRORS} word errors")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", parents=[common], help="detect received samples")
    p.add_argument("--matrix", required=True)
    p.add_argument("--samples", required=True, help="CSV with re_n, im_n columns")
    p.add_argument("--detector", choices=DETECTORS, default="ml")
    p.add_argument("--iters", type=int)
    p.add_argument("--n0", type=float, required=True, help="noise variance")
    p.add_argument("--h", type=complex, default=1.0, help="channel gain")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("analyze", parents=[common], help="structure and distance summary")
    p.add_argument("--matrix", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("presets", parents=[common], help="list or export published designs")
    p.add_argument("--name", help="preset to write as matrix JSON")
    p.set_defaults(func=cmd_presets)
    return parser


def _run_config(args) -> RunConfig:
    ebn0 = parse_grid(args.ebn0) if getattr(args, "ebn0", None) else None
    return RunConfig(
        subcommand=args.subcommand,
        matrix=getattr(args, "matrix", None),
        graph=getattr(args, "graph", None),
        samples=getattr(args, "samples", None),
        out=args.out,
        seed=args.seed,
        budget=getattr(args, "budget", None),
        ebn0=ebn0,
        detector=getattr(args, "detector", None),
        iterations=getattr(args, "iters", None),
        trials=getattr(args, "trials", None),
        threads=args.threads,
        settings=config.as_dict(),
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        run_config = _run_config(args)
        print(run_config.model_dump_json(indent=2), file=sys.stderr)
        run_config.check_paths()
        if args.threads < 1:
            raise InvalidInputError("cli: --threads must be >= 1")
        return args.func(args)
    except EnumerationLimitError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_LIMIT
    except InvalidInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
