import hashlib
import json
import logging
import math
from typing import Iterable, List

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.stats import binomtest

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".17g"


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def json_decoder(data):
    try:
        return json.loads(data)
    except Exception:
        logger.exception(f"Error while decoding data: {data}")
        raise


def json_encoder(data, indent: int = 2) -> str:
    """Stable JSON: sorted keys, numpy scalars and arrays converted."""
    try:
        return json.dumps(data, sort_keys=True, indent=indent, default=_to_builtin)
    except Exception:
        logger.exception(f"Error while encoding data: {data}")
        raise


def format_float(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


def parse_vector(text: str) -> np.ndarray:
    """Parse a comma separated vector such as ``"0.5,0,0"``."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError(f"Empty vector: '{text}'")
    return np.array([float(p) for p in parts], dtype=float)


def parse_options(text: str) -> dict:
    """Parse ``key=value,key=value`` option strings into a dict of strings."""
    options = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ValueError(f"Expected key=value, got '{item}'")
        key, value = item.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *stream)``.

    Streams with different keys are statistically independent, and the same
    key always reproduces the same draws, which is what lets parallel sweeps
    return results independent of evaluation order.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in dimension d."""
    if d == 0:
        return 1.0
    return float(math.pi ** (d / 2) / gamma_fn(d / 2 + 1))


def unit_sphere_area(d: int) -> float:
    return d * unit_ball_volume(d)


def as_points(x, dim: int) -> np.ndarray:
    """Coerce a single d-vector or an (m, d) array into an (m, d) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"Expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def chunked(n: int, size: int) -> Iterable[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def bernoulli_summary(hits: List[bool]):
    """(frequency, standard error) of a list of event indicators."""
    n = len(hits)
    if n == 0:
        return 0.0, 0.0
    p = math.fsum(1.0 for h in hits if h) / n
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n)


def binomial_interval(hits: int, trials: int, confidence: float = 0.997):
    """Exact (Clopper-Pearson) confidence interval for a hit frequency."""
    ci = binomtest(int(hits), int(trials)).proportion_ci(confidence_level=confidence, method="exact")
    return float(ci.low), float(ci.high)
