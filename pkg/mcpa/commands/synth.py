import logging
from pathlib import Path

from mcpa.config import Settings
from mcpa.models import RIG_PRESETS, TRAJECTORIES, SynthSpec
from mcpa.services.problem_io import write_problem
from mcpa.services.synth import generate_problem

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="generate a synthetic problem file")
    parser.add_argument("--preset", choices=RIG_PRESETS, default="forward")
    parser.add_argument("--trajectory", choices=TRAJECTORIES, default="linear")
    parser.add_argument("--poses", type=int, default=50)
    parser.add_argument("--points", type=int, default=1000)
    parser.add_argument("--sigma-max", type=float, default=4.0, help="max pixel noise std")
    parser.add_argument("--rot-perturb", type=float, default=2.0, help="initial rotation error (degrees)")
    parser.add_argument("--trans-perturb", type=float, default=0.5, help="initial translation error (meters)")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def run(args, settings: Settings) -> None:
    spec = SynthSpec(
        rig_preset=args.preset,
        trajectory=args.trajectory,
        n_poses=args.poses,
        n_points=args.points,
        sigma_max=args.sigma_max,
        rot_perturb=args.rot_perturb,
        trans_perturb=args.trans_perturb,
        seed=args.seed,
    )
    data = generate_problem(spec, settings=settings)
    write_problem(args.out, data.problem)
    print(f"{args.out}: {data.problem.n_poses} poses, {len(data.problem.tracks)} tracks, "
          f"{data.problem.n_observations} observations")
