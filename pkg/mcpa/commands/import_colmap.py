from pathlib import Path

from mcpa.config import Settings
from mcpa.services.colmap import import_colmap_text, read_rig_map
from mcpa.services.problem_io import write_problem


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("import-colmap", help="convert a COLMAP text model into a problem file")
    parser.add_argument("--model", type=Path, required=True, help="directory with cameras.txt, images.txt, points3D.txt")
    parser.add_argument("--rig-map", type=Path, required=True, help="JSON mapping image names to [pose_id, camera_id]")
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=run)


def run(args, settings: Settings) -> None:
    problem = import_colmap_text(args.model, read_rig_map(args.rig_map), settings=settings.solver_settings())
    write_problem(args.out, problem)
    print(f"{args.out}: {problem.n_poses} poses, {len(problem.rig)} cameras, {len(problem.tracks)} tracks")
