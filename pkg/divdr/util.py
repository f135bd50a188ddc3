"""
Utilities and helpers.
"""

import os
import hashlib
import tempfile
import backoff
import numpy as np
import orjson as json
from loguru import logger
from typing import Any

# Named random substreams, each derived from the run seed so that ablations can
# vary one factor without perturbing the others.
STREAMS = {
    "data": 0,
    "init": 1,
    "kmeans": 2,
    "shuffle": 3,
}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """
    Get the named random substream for a run seed.
    """
    if name not in STREAMS:
        raise ValueError(f"Unknown random stream: {name}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


def rng_state(generator: np.random.Generator) -> dict:
    """
    JSON-safe bit generator state (PCG64 carries 128-bit integers).
    """
    state = generator.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {key: str(value) for key, value in state["state"].items()},
        "has_uint32": state["has_uint32"],
        "uinteger": str(state["uinteger"]),
    }


def restore_rng(generator: np.random.Generator, payload: dict):
    generator.bit_generator.state = {
        "bit_generator": payload["bit_generator"],
        "state": {key: int(value) for key, value in payload["state"].items()},
        "has_uint32": payload["has_uint32"],
        "uinteger": int(payload["uinteger"]),
    }


def array_digest(*arrays: np.ndarray) -> str:
    """
    Content hash of one or more arrays (dtype, shape and bytes).
    """
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode())
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


@backoff.on_exception(
    backoff.constant,
    OSError,
    jitter=None,
    interval=1,
    max_tries=3,
)
def atomic_write(path: str, data: bytes):
    """
    Write a file atomically: temp file in the same directory, then rename.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as outfile:
            outfile.write(data)
            outfile.flush()
            os.fsync(outfile.fileno())
        os.replace(tmp_path, path)
    except Exception as exc:
        logger.error(f"Failed writing {path}: {exc}")
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(path: str, payload: Any, indent: bool = True):
    option = json.OPT_INDENT_2 | json.OPT_SORT_KEYS if indent else json.OPT_SORT_KEYS
    atomic_write(path, json.dumps(payload, option=option | json.OPT_SERIALIZE_NUMPY))


def read_json(path: str) -> Any:
    with open(path, "rb") as infile:
        return json.loads(infile.read())
