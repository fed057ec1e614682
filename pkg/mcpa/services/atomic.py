"""Atomic text-file writes shared by every output writer."""

import os
import tempfile
from pathlib import Path


def write_text_atomic(path: Path, content: str) -> None:
    """Write UTF-8 text with LF line endings via a temp file and rename.

    Readers never observe a partially written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        tmp = Path(tmp_path)
        with tmp.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        tmp.replace(path)
    except Exception:
        Path(tmp_path).unlink(missing_ok=True)
        raise


def format_float(value: float) -> str:
    """17 significant digits, so every double round-trips exactly."""
    return format(float(value), ".17g")
