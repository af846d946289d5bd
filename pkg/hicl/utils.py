"""Helper functions shared across the engine.

Seeded random streams, parameter fingerprints and small set metrics.
"""

import hashlib
from typing import Dict, Iterable, Mapping

import numpy as np

from .exceptions import ParameterError

# Named sub-streams derived from the single run seed
RNG_STREAMS: Dict[str, int] = {
    "data": 0,
    "init": 1,
    "sampling": 2,
    "analysis": 3,
}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose.

    Args:
        seed: Run seed (64-bit)
        name: One of data, init, sampling, analysis

    Returns:
        numpy Generator seeded from (seed, stream index)

    Raises:
        ParameterError: If the stream name is unknown
    """
    if name not in RNG_STREAMS:
        raise ParameterError(f"unknown random stream {name!r}. Supported: {list(RNG_STREAMS)}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(RNG_STREAMS[name],))
    return np.random.Generator(np.random.PCG64(sequence))


def fingerprint(arrays: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over names and raw little-endian bytes, in name order"""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return digest.hexdigest()


def jaccard(a: Iterable[int], b: Iterable[int]) -> float:
    """|A ∩ B| / |A ∪ B|; two empty sets count as identical"""
    set_a, set_b = set(int(i) for i in a), set(int(i) for i in b)
    union = set_a | set_b
    if not union:
        return 1.0
    return len(set_a & set_b) / len(union)


def task_expert(task_id: int, n_experts: int) -> int:
    """Expert a task is assigned to (task t → expert t mod N)"""
    return task_id % n_experts
