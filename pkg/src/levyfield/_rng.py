"""Counter-based random streams keyed by (seed, tag, index...)."""

import hashlib

import numpy as np


def stream(seed, *tags):
    """Return an independent Philox generator for ``(seed, *tags)``.

    The key is a hash of the textual key tuple, so streams are reproducible
    across platforms and independent of the order in which they are created.
    """
    text = ":".join(str(t) for t in (seed,) + tags).encode()
    digest = hashlib.blake2b(text, digest_size=16).digest()
    key = np.frombuffer(digest, dtype="<u8").copy()
    return np.random.Generator(np.random.Philox(key=key))
