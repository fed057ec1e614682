from pathlib import Path

from mcpa.config import Settings
from mcpa.models import BenchCell, BenchSpec, Mode
from mcpa.services.bench import read_bench_spec, run_bench


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="run a grid of synthetic solves and write CSV tables")
    parser.add_argument("--spec", type=Path, help="JSON grid file; otherwise one cell from the flags below")
    parser.add_argument("--poses", type=int, default=50)
    parser.add_argument("--points", type=int, default=1000)
    parser.add_argument("--sigma-max", type=float, default=4.0)
    parser.add_argument("--modes", nargs="+", choices=[m.value for m in Mode], default=[m.value for m in Mode])
    parser.add_argument("--trials", type=int, default=1)
    parser.add_argument("--seed-base", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--summary", type=Path)
    parser.set_defaults(handler=run)


def run(args, settings: Settings) -> None:
    if args.spec:
        spec = read_bench_spec(args.spec)
    else:
        spec = BenchSpec(
            cells=tuple(BenchCell(args.poses, args.points, args.sigma_max, Mode(m)) for m in args.modes),
            trials=args.trials,
            seed_base=args.seed_base,
        )
    rows = run_bench(spec, args.out, args.summary, settings)
    failed = sum(r.status != "ok" for r in rows)
    print(f"{args.out}: {len(rows)} runs, {failed} failed")
