import argparse
import logging
import sys

from mcpa.commands import bench, import_colmap, optimize, select_bases, synth, triangulate
from mcpa.config import get_settings
from mcpa.exceptions import MCPAError

logger = logging.getLogger("mcpa")

COMMANDS = (synth, select_bases, optimize, triangulate, bench, import_colmap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcpa", description="Multi-camera pose-only pose adjustment")
    parser.add_argument("--log-level", default=None, help="overrides MCPA_LOG_LEVEL")
    parser.add_argument(
        "--no-timing", action="store_true", help="write 0 for wall times so output is byte-reproducible"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    if args.no_timing:
        settings = settings.model_copy(update={"record_timing": False})
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        args.handler(args, settings)
    except MCPAError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
