"""Small helpers shared by the file writers."""
import hashlib
import json
import logging
import math
from pathlib import Path

logger = logging.getLogger(__name__)


def format_float(value):
    """Shortest text that parses back to exactly ``value``."""
    return repr(float(value))


def hash_files(paths):
    """sha256 over the names and contents of ``paths``, in sorted order."""
    digest = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def bundle_hash(path):
    """Content hash of every file in a bundle directory."""
    root = Path(path)
    if not root.is_dir():
        root = root.parent
    files = [p for p in root.iterdir() if p.is_file()]
    value = hash_files(files)
    logger.debug('Bundle "%s" hashes to %s', root, value)
    return value


def jsonable(value):
    """Replace non-finite floats (not valid JSON) with None, recursively."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: jsonable(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(val) for val in value]
    return value


def dump_json(value, **kwargs):
    """Deterministic JSON text: sorted keys, no NaN or infinity."""
    return json.dumps(jsonable(value), sort_keys=True, allow_nan=False,
                      **kwargs)
