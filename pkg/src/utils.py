"""Small shared helpers for higgsflow."""

from pathlib import Path
from typing import Union

PathLike = Union[str, Path]


def ensure_dir(dir_path: PathLike) -> Path:
    """Ensure directory exists and return Path object."""
    path = Path(dir_path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def require_file(file_path: PathLike, kind: str = "file") -> Path:
    """Return ``file_path`` as a Path or raise ValueError naming the missing artifact."""
    path = Path(file_path)
    if not path.is_file():
        print(f"❌ {kind.capitalize()} file not found: {path}")
        raise ValueError(f"{kind.capitalize()} file not found: {path}")
    return path


def format_elapsed(seconds: float) -> str:
    """Wall time as ``1h 02m 03s``, ``2m 03s`` or ``3.4s``."""
    minutes, secs = divmod(seconds, 60.0)
    hours, minutes = divmod(int(minutes), 60)
    if hours:
        return f"{hours}h {minutes:02d}m {int(secs):02d}s"
    if minutes:
        return f"{minutes}m {int(secs):02d}s"
    return f"{secs:.1f}s"


def format_value(value: float) -> str:
    """Compact scientific rendering for report tables."""
    if value != value:
        return "nan"
    return f"{value:.3e}"
