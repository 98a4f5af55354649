"""Byte tokenizer and corpus loading."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError


def encode(data: bytes) -> np.ndarray:
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)


def decode(ids) -> bytes:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > 255):
        raise ValueError("token ids must lie in [0, 255]")
    return ids.astype(np.uint8).tobytes()


def ingest_corpus(path, T):
    """Read ``path`` as raw bytes; at least ``2*T`` bytes are required."""
    path = Path(path)
    minimum = 2 * T
    if not path.is_file():
        raise ConfigError(f"corpus {path} does not exist (need a file of at least {minimum} bytes)")
    data = path.read_bytes()
    if len(data) < minimum:
        raise ConfigError(f"corpus {path} has {len(data)} bytes; at least {minimum} are required")
    return encode(data)


_ONSETS = ["", "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v",
           "w", "br", "ch", "st", "th", "tr", "pl", "gr", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ea", "ou", "ai"]
_CODAS = ["", "", "n", "r", "s", "t", "l", "nd", "st", "ng"]


def synthetic_corpus(n_bytes, seed=0, n_words=3000, zipf_a=1.0):
    """Deterministic English-like text with Zipf-distributed word frequencies.

    Used when no corpus file is configured; no network access is needed.
    """
    rng = np.random.default_rng(seed)
    words = []
    seen = set()
    while len(words) < n_words:
        n_syl = 1 + min(int(rng.geometric(0.55)) - 1, 3)
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
            + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(n_syl)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    # frequent words are short, as in natural text
    words.sort(key=len)
    ranks = np.arange(1, n_words + 1, dtype=np.float64)
    probs = ranks ** (-zipf_a)
    probs /= probs.sum()
    out = []
    size = 0
    while size < n_bytes:
        length = int(rng.integers(5, 16))
        ids = rng.choice(n_words, size=length, p=probs)
        sent = " ".join(words[i] for i in ids)
        sent = sent[0].upper() + sent[1:] + (". " if rng.random() < 0.85 else ", ")
        if rng.random() < 0.08:
            sent += "\n"
        out.append(sent)
        size += len(sent)
    return "".join(out).encode("ascii")[:n_bytes]
