import logging
from dataclasses import replace
from pathlib import Path

from mcpa.base_select import BaseStrategy, assign_bases
from mcpa.config import Settings
from mcpa.services.problem_io import read_problem, write_problem

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("select-bases", help="choose base observation pairs and store them in the problem")
    parser.add_argument("--problem", type=Path, required=True)
    parser.add_argument("--strategy", choices=[s.value for s in BaseStrategy], default=BaseStrategy.ROUNDNESS.value)
    parser.add_argument("--seed", type=int, default=0, help="seed of the random strategy")
    parser.add_argument("--out", type=Path, help="defaults to overwriting --problem")
    parser.set_defaults(handler=run)


def run(args, settings: Settings) -> None:
    problem = read_problem(args.problem)
    kept, dropped = assign_bases(problem.tracks, problem.poses, BaseStrategy(args.strategy), args.seed, reselect=True)
    out = args.out or args.problem
    write_problem(out, replace(problem, tracks=kept))
    print(f"{out}: {len(kept)} tracks with bases, {dropped} dropped")
