import hashlib


def derive_seed(base_seed: int, *labels) -> int:
    """
    Derives a stable 64-bit seed from a base seed and any labels
    (record ids, component names). Independent of PYTHONHASHSEED.
    """
    key = ":".join([str(base_seed)] + [str(label) for label in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")

