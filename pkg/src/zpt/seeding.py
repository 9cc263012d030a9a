"""Deterministic seed derivation for independent random streams."""
import hashlib

import numpy as np


def derive_seed(base: int, *labels) -> int:
    """Derive a 32-bit seed from a base seed and any hashable labels.

    Streams derived with different labels are independent, and the result
    does not depend on platform hash randomization.
    """
    text = repr((int(base),) + tuple(str(x) for x in labels)).encode("utf-8")
    digest = hashlib.sha256(text).digest()
    entropy = int.from_bytes(digest[:8], "little")
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
