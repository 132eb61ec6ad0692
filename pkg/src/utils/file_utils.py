"""
Tab-separated text helpers shared by the dataset loaders and report writers.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from src.core.errors import MissingFileError

PathLike = Union[str, Path]


def iter_tsv_records(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """
    Iterate over the data lines of a UTF-8 TSV file.

    Blank lines and lines whose first non-space character is ``#`` are skipped.

    Args:
        path: file to read

    Returns:
        iterator of (1-based line number, stripped fields)

    Raises:
        MissingFileError: the file does not exist
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"file not found: {file_path}")

    with file_path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            yield line_no, [field.strip() for field in text.split("\t")]


def write_tsv(
    path: PathLike,
    rows: Iterable[Sequence[object]],
    header: Optional[Sequence[str]] = None,
    comments: Sequence[str] = (),
) -> Path:
    """
    Write rows as TSV, preceded by ``#`` comment lines and an optional ``#`` header.

    Floats are written with ``repr`` so values survive a round trip unchanged.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", encoding="utf-8", newline="\n") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        if header:
            handle.write("#" + "\t".join(header) + "\n")
        for row in rows:
            handle.write("\t".join(format_field(value) for value in row) + "\n")
    return file_path


def format_field(value: object) -> str:
    # float() strips numpy scalar types whose repr is not a bare number
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def resolve_relative(anchor_file: PathLike, target: str) -> Path:
    """Resolve ``target`` against the directory holding ``anchor_file``."""
    candidate = Path(target)
    if candidate.is_absolute():
        return candidate
    return Path(anchor_file).resolve().parent / candidate


def ensure_dir(path: PathLike) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory
