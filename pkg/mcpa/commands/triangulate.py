from pathlib import Path

from mcpa.config import Settings
from mcpa.exceptions import ParseError
from mcpa.services.problem_io import read_poses, read_problem, write_points
from mcpa.triangulate import TriangulationMethod, reconstruct_points


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("triangulate", help="triangulate every track at given poses")
    parser.add_argument("--problem", type=Path, required=True)
    parser.add_argument("--poses", type=Path, help="pose file; defaults to the problem's poses")
    parser.add_argument("--method", choices=[m.value for m in TriangulationMethod], default=TriangulationMethod.SOT.value)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def run(args, settings: Settings) -> None:
    problem = read_problem(args.problem)
    poses = read_poses(args.poses) if args.poses else problem.poses
    if len(poses) != problem.n_poses:
        raise ParseError(f"{len(poses)} poses for a problem with {problem.n_poses}", str(args.poses))
    reconstruction = reconstruct_points(problem.tracks, poses, TriangulationMethod(args.method))
    write_points(args.out, reconstruction)
    print(f"{args.out}: {int(reconstruction.valid.sum())} of {len(problem.tracks)} tracks triangulated")
