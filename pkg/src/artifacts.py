"""Crash-safe writes for run artifacts."""
import os
import tempfile
from contextlib import contextmanager
from typing import Iterator


@contextmanager
def replace_on_success(path: str) -> Iterator[str]:
    """Yield a temporary path next to ``path`` and move it into place on exit.

    The final file only appears once the body finished without raising, so
    an interrupted run never leaves a truncated artifact behind.

    Args:
        path: Final location of the artifact.

    Yields:
        Path of the temporary file to write.
    """
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=directory, prefix=".partial-", suffix=os.path.basename(path))
    os.close(handle)
    try:
        yield temporary
        os.replace(temporary, path)
    finally:
        if os.path.exists(temporary):
            os.remove(temporary)
