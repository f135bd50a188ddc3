"""
On-disk cache of generated splits.

<name>.bin layout (little-endian):
    magic      8 bytes  b"DVDRSYN1"
    count      uint32   number of records
    size       uint32   image side
    records, each:
        length       uint32   payload bytes that follow
        sample_id    int64
        true_subset  int8     (-1 when unlabeled)
        image        float64[size*size]
        mask         uint8[size*size]

<name>.manifest.json: {"format", "version", "split", "count", "spec", "sha256"}
"""

import os
import struct
import hashlib
import numpy as np
from loguru import logger
from typing import Optional, Sequence
from divdr.data.schemas import DatasetSpec, SynthSample
from divdr.util import atomic_write, read_json, write_json

MAGIC = b"DVDRSYN1"
CACHE_VERSION = 1
HEADER = struct.Struct("<8sII")
RECORD_PREFIX = struct.Struct("<Iqb")


def _paths(directory: str, name: str) -> tuple[str, str]:
    return os.path.join(directory, f"{name}.bin"), os.path.join(directory, f"{name}.manifest.json")


def encode_split(samples: Sequence[SynthSample], size: int) -> bytes:
    chunks = [HEADER.pack(MAGIC, len(samples), size)]
    for sample in samples:
        image = np.ascontiguousarray(sample.image.reshape(-1), dtype="<f8").tobytes()
        mask = np.ascontiguousarray(sample.mask.reshape(-1), dtype=np.uint8).tobytes()
        length = RECORD_PREFIX.size - 4 + len(image) + len(mask)
        subset = -1 if sample.true_subset is None else sample.true_subset
        chunks.append(RECORD_PREFIX.pack(length, sample.sample_id, subset))
        chunks.append(image)
        chunks.append(mask)
    return b"".join(chunks)


def decode_split(payload: bytes) -> list[SynthSample]:
    magic, count, size = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise ValueError(f"Not a cached split (magic {magic!r})")
    offset = HEADER.size
    pixels = size * size
    samples = []
    for _ in range(count):
        length, sample_id, subset = RECORD_PREFIX.unpack_from(payload, offset)
        body = offset + RECORD_PREFIX.size
        if length != RECORD_PREFIX.size - 4 + pixels * 9:
            raise ValueError(f"Corrupt record for sample {sample_id}: length {length}")
        image = np.frombuffer(payload, dtype="<f8", count=pixels, offset=body)
        mask = np.frombuffer(payload, dtype=np.uint8, count=pixels, offset=body + pixels * 8)
        samples.append(
            SynthSample(
                image=image.astype(np.float64).reshape(1, size, size),
                mask=mask.astype(np.int64).reshape(size, size),
                true_subset=None if subset < 0 else int(subset),
                sample_id=int(sample_id),
            )
        )
        offset += 4 + length
    return samples


def save_split(directory: str, name: str, samples: Sequence[SynthSample], spec: DatasetSpec):
    bin_path, manifest_path = _paths(directory, name)
    payload = encode_split(samples, spec.size)
    atomic_write(bin_path, payload)
    write_json(
        manifest_path,
        {
            "format": "divdr-synth-split",
            "version": CACHE_VERSION,
            "split": name,
            "count": len(samples),
            "spec": spec.model_dump(mode="json"),
            "sha256": hashlib.sha256(payload).hexdigest(),
        },
    )
    logger.info(f"Cached {len(samples)} samples to {bin_path}")


def load_split(directory: str, name: str) -> list[SynthSample]:
    bin_path, manifest_path = _paths(directory, name)
    manifest = read_json(manifest_path)
    with open(bin_path, "rb") as infile:
        payload = infile.read()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ValueError(f"Content hash mismatch for cached split {bin_path}")
    return decode_split(payload)


def cached_split(directory: str, name: str, spec: DatasetSpec) -> Optional[list[SynthSample]]:
    """
    The cached split if one exists for exactly this spec, else None.
    """
    bin_path, manifest_path = _paths(directory, name)
    if not os.path.exists(bin_path) or not os.path.exists(manifest_path):
        return None
    if read_json(manifest_path).get("spec") != spec.model_dump(mode="json"):
        logger.warning(f"Ignoring cached split {bin_path}: generated from a different spec")
        return None
    return load_split(directory, name)
