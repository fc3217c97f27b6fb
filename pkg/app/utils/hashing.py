"""Process-independent hashing and seed derivation."""

import hashlib


def stable_hash(text: str) -> int:
    """64-bit hash of ``text`` that is identical across processes and platforms."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_seed(run_seed: int, *parts: object) -> int:
    """Split a run-level seed into an independent child seed keyed by ``parts``.

    The child depends only on the run seed and the parts (iteration, instance id, ...),
    never on scheduling order, so parallel workers reproduce serial results.
    """
    payload = "\x1f".join([str(run_seed), *(str(part) for part in parts)])
    return stable_hash(payload) & 0x7FFF_FFFF_FFFF_FFFF
