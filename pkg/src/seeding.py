"""Named sub-seeds derived from one root seed."""
import hashlib
from typing import Union


def derive_seed(root: int, *names: Union[str, int]) -> int:
    """Derive a reproducible 63-bit seed from a root seed and a name path.

    Calls with different name paths give independent streams, and adding a
    new consumer of randomness never shifts the seeds of existing ones.

    Args:
        root: The experiment's root seed.
        *names: Path naming the consumer of randomness, e.g.
            ``("consumer", "c03")``.

    Returns:
        A non-negative integer below 2**63.
    """
    path = "/".join([str(root)] + [str(name) for name in names])
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
