"""
The deepshells command: precompute, match, train, eval and selftest.

    deepshells precompute data/faust
    deepshells match --src data/faust/tr_reg_000.off \\
        --dst data/faust/tr_reg_001.off --weights filters.dshl --out 000__001.txt
    deepshells train --data data/faust --epochs 10 --out filters.dshl
    deepshells eval --meshes data/faust --pred results/ --truth identity --out curves/

Exit status is 0 on success, 1 when the input was wrong and 2 when a numerical
step failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
from argparse import BooleanOptionalAction
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from deepshells import settings
from deepshells.config import PipelineConfig, load_config
from deepshells.errors import NumericalError, UsageError, UserError
from deepshells.evaluation import (
    DISTORTION_MAX,
    DISTORTION_THRESHOLDS,
    ERROR_MAX,
    ERROR_THRESHOLDS,
    conformal_distortion,
    cumulative_fractions,
    geodesic_error,
    write_curve,
)
from deepshells.filters import init_filter_stack, read_filterbanks
from deepshells.grad import train
from deepshells.mesh import TriMesh
from deepshells.mesh.formats import load_mesh
from deepshells.preprocess import ShapeCache, mesh_files
from deepshells.profiling import stopwatch
from deepshells.settings import configure_logging
from deepshells.shells import match_pair
from deepshells.shells.formats import (
    IDENTITY_TOKEN,
    read_correspondence,
    read_ground_truth,
    write_correspondence,
    write_energy_trace,
)
from deepshells.transport import write_dense_coupling

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
PAIR_SEPARATOR = "__"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_NUMERICAL_ERROR = 2

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

MEAN_ERROR_FIELDS = ("pair_x", "pair_y", "mean_error")


class ArgumentParser(argparse.ArgumentParser):
    """
    Raises UsageError instead of exiting, so main decides the exit status.
    """

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="deepshells", description="Dense correspondences between 3D meshes."
    )
    parser.add_argument("--config", type=Path, help="JSON pipeline configuration")
    parser.add_argument(
        "--log-level", type=str.upper, choices=LOG_LEVELS, help="default: $LOG_LEVEL"
    )
    parser.add_argument(
        "--cache-dir", type=Path, help="default: $DEEPSHELLS_CACHE or the user cache"
    )
    parser.add_argument(
        "--progress", action=BooleanOptionalAction, default=False, help="progress bars"
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    precompute = commands.add_parser(
        "precompute", help="normalize meshes and cache eigenpairs and descriptors"
    )
    precompute.add_argument("directories", nargs="+", type=Path)
    precompute.add_argument(
        "--force", action="store_true", help="recompute existing caches"
    )
    precompute.add_argument("--jobs", type=int, default=1)
    precompute.set_defaults(handler=run_precompute)

    match = commands.add_parser("match", help="match one pair of meshes")
    match.add_argument("--src", type=Path, required=True)
    match.add_argument("--dst", type=Path, required=True)
    features = match.add_mutually_exclusive_group()
    features.add_argument("--weights", type=Path, help="trained filter banks")
    features.add_argument(
        "--init-from-shot",
        action="store_true",
        help="start from raw SHOT descriptors instead of learned features",
    )
    match.add_argument("--out", type=Path, required=True)
    match.add_argument("--energy-log", type=Path, help="per-level energies as CSV")
    match.add_argument(
        "--dense-coupling", type=Path, help="also write the final coupling (debugging)"
    )
    match.set_defaults(handler=run_match)

    training = commands.add_parser("train", help="train filter banks without labels")
    training.add_argument(
        "--data", type=Path, action="append", required=True, help="repeatable"
    )
    training.add_argument("--out", type=Path, required=True, help="checkpoint")
    training.add_argument("--loss-log", type=Path, help="default: <out>-loss.csv")
    training.add_argument("--init", type=Path, help="continue from these weights")
    training.add_argument("--epochs", type=int)
    training.add_argument("--seed", type=int)
    training.add_argument("--learning-rate", type=float)
    training.set_defaults(handler=run_train)

    evaluate = commands.add_parser("eval", help="geodesic error and distortion")
    evaluate.add_argument(
        "--meshes", type=Path, required=True, help="directory holding the meshes"
    )
    evaluate.add_argument(
        "--pred",
        type=Path,
        required=True,
        help="a correspondence file, or a directory of SRC__DST.txt files",
    )
    evaluate.add_argument(
        "--truth", help=f"file, directory, or {IDENTITY_TOKEN!r}; omit for none"
    )
    evaluate.add_argument("--src", help="source mesh name for a single --pred file")
    evaluate.add_argument("--dst", help="target mesh name for a single --pred file")
    evaluate.add_argument("--out", type=Path, required=True, help="output directory")
    evaluate.add_argument(
        "--distortion", action="store_true", help="also measure conformal distortion"
    )
    evaluate.add_argument("--jobs", type=int, default=1)
    evaluate.set_defaults(handler=run_eval)

    selftest = commands.add_parser("selftest", help="run the test suite")
    selftest.add_argument(
        "pytest_args", nargs=argparse.REMAINDER, help="after --, passed to pytest"
    )
    selftest.set_defaults(handler=run_selftest)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USER_ERROR

    level = None if args.log_level is None else getattr(logging, args.log_level)
    configure_logging(level)
    if settings.NUM_THREADS is not None:
        torch.set_num_threads(settings.NUM_THREADS)

    try:
        config = load_config(args.config)
        return args.handler(args, config) or EXIT_OK
    except UserError as e:
        logger.error("%s", e)
        return EXIT_USER_ERROR
    except OSError as e:
        logger.error("%s", e)
        return EXIT_USER_ERROR
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL_ERROR


def _shape_cache(args, config: PipelineConfig) -> ShapeCache:
    return ShapeCache(
        n_eigs=config.n_eigs,
        shot=config.shot(),
        sqrt_area=config.sqrt_area,
        directory=args.cache_dir,
    )


def _check_jobs(jobs: int) -> int:
    if jobs < 1:
        raise UsageError(f"--jobs must be at least 1, got {jobs}")
    return jobs


################################### Subcommands ###################################


def run_precompute(args, config: PipelineConfig) -> None:
    jobs = _check_jobs(args.jobs)
    for directory in args.directories:
        if not directory.is_dir():
            raise UsageError(f"{directory} is not a directory")
    paths = mesh_files(args.directories)
    if not paths:
        raise UsageError("no .off or .ply files in the given directories")

    cache = _shape_cache(args, config)
    with stopwatch(f"precomputing {len(paths)} meshes"):
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            shapes = pool.map(lambda path: cache.precompute(path, args.force), paths)
            for _ in tqdm(
                shapes, total=len(paths), unit="mesh", disable=not args.progress
            ):
                pass


def run_match(args, config: PipelineConfig) -> None:
    if args.init_from_shot:
        config = dataclasses.replace(config, init_from_shot=True)
    if args.weights is None and not (config.init_from_shot or config.ablation):
        raise UsageError("match needs --weights unless starting from SHOT features")
    cache = _shape_cache(args, config)
    X, Y = cache.load(args.src), cache.load(args.dst)
    banks = [] if args.weights is None else read_filterbanks(args.weights)
    schedule = config.testing_schedule().capped(min(X.basis.K, Y.basis.K))

    with torch.no_grad():
        hard, state = match_pair(X, Y, banks, schedule, config.shells())

    write_correspondence(args.out, hard, Y.n)
    logger.info("wrote %s", args.out)
    if args.energy_log is not None:
        write_energy_trace(args.energy_log, state)
    if args.dense_coupling is not None:
        assert state.final is not None
        write_dense_coupling(args.dense_coupling, state.final)


def run_train(args, config: PipelineConfig) -> None:
    overrides = {
        "epochs": args.epochs,
        "seed": args.seed,
        "learning_rate": args.learning_rate,
    }
    config = dataclasses.replace(
        config, **{key: value for key, value in overrides.items() if value is not None}
    )
    for directory in args.data:
        if not directory.is_dir():
            raise UsageError(f"{directory} is not a directory")

    cache = _shape_cache(args, config)
    shapes = [cache.load(path) for path in mesh_files(args.data)]
    if len(shapes) < 2:
        raise UsageError(
            f"training needs at least two meshes, found {len(shapes)} in "
            + ", ".join(str(directory) for directory in args.data)
        )

    if args.init is not None:
        banks = read_filterbanks(args.init)
    else:
        banks = init_filter_stack(config.seed, config.bank_shapes())

    trainer = config.trainer()
    available = min(shape.basis.K for shape in shapes)
    trainer = dataclasses.replace(trainer, schedule=trainer.schedule.capped(available))

    loss_log = args.loss_log
    if loss_log is None:
        loss_log = args.out.with_name(f"{args.out.stem}-loss.csv")
    try:
        train(
            shapes,
            banks,
            trainer,
            loss_log=loss_log,
            checkpoint=args.out,
            progress=args.progress,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    logger.info("wrote %s and %s", args.out, loss_log)


def _split_pair_name(path: Path) -> Tuple[str, str]:
    parts = path.stem.split(PAIR_SEPARATOR)
    if len(parts) != 2 or not all(parts):
        raise UsageError(
            f"cannot tell the meshes of {path.name}; "
            f"name it SRC{PAIR_SEPARATOR}DST.txt or pass --src and --dst"
        )
    return parts[0], parts[1]


@dataclasses.dataclass(frozen=True)
class EvalJob:
    pred: Path
    src: str
    dst: str
    truth: Optional[str]


def _eval_jobs(args) -> List[EvalJob]:
    if args.pred.is_dir():
        if args.src or args.dst:
            raise UsageError("--src and --dst only apply to a single --pred file")
        preds = sorted(args.pred.glob("*.txt"))
        if not preds:
            raise UsageError(f"no .txt correspondence files in {args.pred}")
        named = [(pred, *_split_pair_name(pred)) for pred in preds]
    else:
        if bool(args.src) != bool(args.dst):
            raise UsageError("give both --src and --dst, or neither")
        names = (args.src, args.dst) if args.src else _split_pair_name(args.pred)
        named = [(args.pred, *names)]

    truth_dir = None
    if args.truth is not None and args.truth != IDENTITY_TOKEN:
        if Path(args.truth).is_dir():
            truth_dir = Path(args.truth)
        elif len(named) > 1:
            raise UsageError("evaluating a directory needs a --truth directory")

    jobs = []
    for pred, src, dst in named:
        truth = args.truth
        if truth_dir is not None:
            truth = str(truth_dir / pred.name)
        jobs.append(EvalJob(pred=pred, src=src, dst=dst, truth=truth))
    return jobs


def run_eval(args, config: PipelineConfig) -> None:
    workers = _check_jobs(args.jobs)
    if args.truth is None and not args.distortion:
        raise UsageError("nothing to evaluate: give --truth, --distortion, or both")
    jobs = _eval_jobs(args)
    meshes: Dict[str, Path] = {path.stem: path for path in mesh_files([args.meshes])}
    loaded: Dict[str, TriMesh] = {}
    for job in jobs:
        for name in (job.src, job.dst):
            if name not in meshes:
                raise UsageError(f"no mesh named {name!r} in {args.meshes}")
            if name not in loaded:
                loaded[name] = load_mesh(meshes[name])

    def evaluate(job: EvalJob):
        mesh_x, mesh_y = loaded[job.src], loaded[job.dst]
        predicted, n_y = read_correspondence(job.pred)
        if n_y != mesh_y.n_vertices or len(predicted) != mesh_x.n_vertices:
            raise UsageError(
                f"{job.pred} maps {len(predicted)} to {n_y} vertices but "
                f"{job.src} and {job.dst} have {mesh_x.n_vertices} and "
                f"{mesh_y.n_vertices}"
            )
        errors = distortion = None
        if job.truth is not None:
            truth = read_ground_truth(job.truth, mesh_x.n_vertices)
            errors = geodesic_error(mesh_y, predicted, truth, config.error_norm)
        if args.distortion:
            distortion = conformal_distortion(mesh_x, mesh_y, predicted)
        return errors, distortion

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            tqdm(
                pool.map(evaluate, jobs),
                total=len(jobs),
                unit="pair",
                disable=not args.progress,
            )
        )

    args.out.mkdir(parents=True, exist_ok=True)
    if args.truth is not None:
        _write_error_summary(args.out, jobs, [errors for errors, _ in results])
    if args.distortion:
        values = np.concatenate([distortion.values for _, distortion in results])
        thresholds = np.linspace(2, DISTORTION_MAX, DISTORTION_THRESHOLDS)
        write_curve(
            args.out / "conformal_distortion.csv",
            thresholds,
            cumulative_fractions(values, thresholds),
        )
    logger.info("evaluated %d pairs into %s", len(jobs), args.out)


def _write_error_summary(out: Path, jobs: Sequence[EvalJob], curves) -> None:
    with open(out / "mean_errors.csv", "w", encoding="UTF-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MEAN_ERROR_FIELDS)
        writer.writeheader()
        for job, curve in zip(jobs, curves):
            writer.writerow(
                {
                    "pair_x": job.src,
                    "pair_y": job.dst,
                    "mean_error": repr(curve.mean_error),
                }
            )
    errors = np.concatenate([curve.errors for curve in curves])
    thresholds = np.linspace(0, ERROR_MAX, ERROR_THRESHOLDS)
    write_curve(
        out / "geodesic_error.csv", thresholds, cumulative_fractions(errors, thresholds)
    )
    logger.info("mean geodesic error over all pairs: %.6g", errors.mean())


def run_selftest(args, config: PipelineConfig) -> int:
    try:
        import pytest
    except ImportError:
        raise UserError("selftest needs pytest; install the dev dependencies") from None
    extra = list(args.pytest_args)
    if extra[:1] == ["--"]:
        extra = extra[1:]
    status = pytest.main([str(PACKAGE_DIR), "-q", *extra])
    return EXIT_OK if status == 0 else EXIT_USER_ERROR
