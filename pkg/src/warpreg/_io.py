"""Small shared helpers: atomic file writes and named random streams."""

import os
import tempfile
import zlib
from contextlib import contextmanager

import numpy as np


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rng_stream(seed, name):
    """Independent generator for the named sub-stream of ``seed``.

    Streams are keyed by name, so adding a new consumer never shifts the
    numbers drawn by existing ones.
    """
    key = zlib.crc32(name.encode("ascii"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
