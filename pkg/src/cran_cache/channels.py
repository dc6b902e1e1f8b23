"""Rayleigh backhaul channel samples with log-distance path loss, plus file I/O.

File layout: line 1 is a JSON metadata header, the rest is CSV with columns
``t,k,row,col,re,im`` in row-major order. Floats are written with ``repr``
so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ProblemConfig

FORMAT_VERSION = 1
GENERATOR = "numpy.Philox(SeedSequence((seed, stream, k, t)))"
CSV_HEADER = "t,k,row,col,re,im"


class ChannelFileError(ValueError):
    pass


@dataclass
class ChannelSet:
    H: np.ndarray                  # (T, K, N, M) complex128
    distances: np.ndarray          # (K,) meters
    pathloss_db: np.ndarray        # (K,)
    antenna_gain_db: float
    seed: int
    stream: int = 0
    G: int = 0
    fingerprint: str = ""
    generator: str = field(default=GENERATOR)

    @property
    def T(self):
        return self.H.shape[0]

    @property
    def K(self):
        return self.H.shape[1]

    def linear_gain(self) -> np.ndarray:
        return 10.0 ** ((self.antenna_gain_db - self.pathloss_db) / 10.0)

    def subset(self, ts) -> "ChannelSet":
        ts = np.atleast_1d(ts)
        return ChannelSet(self.H[ts].copy(), self.distances, self.pathloss_db,
                          self.antenna_gain_db, self.seed, self.stream, self.G,
                          self.fingerprint, self.generator)

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (np.array_equal(self.H, other.H)
                and np.array_equal(self.distances, other.distances)
                and np.array_equal(self.pathloss_db, other.pathloss_db)
                and self.antenna_gain_db == other.antenna_gain_db
                and self.seed == other.seed and self.stream == other.stream
                and self.G == other.G and self.fingerprint == other.fingerprint)


def path_loss_db(distance_m) -> float:
    """128.1 + 37.6 log10(D / 1 km)."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


def noise_power(psd_dbm_per_hz, bandwidth_hz) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    dbm = psd_dbm_per_hz + 10.0 * math.log10(bandwidth_hz)
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _draw(seed, stream, k, t, shape):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, stream, k, t))))
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def sample_channels(config: ProblemConfig, distances, antenna_gain_db, seed,
                    T=None, stream=0) -> ChannelSet:
    """Draw T i.i.d. CN(0, gain_k) channel matrices per BS.

    Each (k, t) block has its own Philox stream keyed by (seed, stream, k, t),
    so any block can be regenerated independently of the others.
    """
    distances = np.asarray(distances, dtype=float)
    if distances.shape != (config.K,):
        raise ValueError(f"expected {config.K} distances, got {distances.shape}")
    T = config.T if T is None else int(T)
    pl = np.asarray(path_loss_db(distances), dtype=float).reshape(config.K)
    amp = np.sqrt(10.0 ** ((antenna_gain_db - pl) / 10.0))
    H = np.empty((T, config.K, config.N, config.M), dtype=complex)
    for k in range(config.K):
        for t in range(T):
            H[t, k] = amp[k] * _draw(seed, stream, k, t, (config.N, config.M))
    return ChannelSet(H, distances, pl, float(antenna_gain_db), int(seed), int(stream),
                      config.G, config.fingerprint())


def save_channels(chset: ChannelSet, path):
    T, K, N, M = chset.H.shape
    meta = {
        "format_version": FORMAT_VERSION, "K": K, "G": chset.G, "M": M, "N": N, "T": T,
        "seed": chset.seed, "stream": chset.stream, "generator": chset.generator,
        "distances": [float(x) for x in chset.distances],
        "pathloss_db": [float(x) for x in chset.pathloss_db],
        "antenna_gain_db": chset.antenna_gain_db, "fingerprint": chset.fingerprint,
    }
    lines = [json.dumps(meta, sort_keys=True), CSV_HEADER]
    for t in range(T):
        for k in range(K):
            for r in range(N):
                for c in range(M):
                    z = chset.H[t, k, r, c]
                    lines.append(f"{t},{k},{r},{c},{float(z.real)!r},{float(z.imag)!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


_META_KEYS = {"format_version": int, "K": int, "G": int, "M": int, "N": int, "T": int,
              "seed": int, "distances": list, "pathloss_db": list, "antenna_gain_db": float}


def load_channels(path) -> ChannelSet:
    """Parse a channel file; errors carry the byte offset of the bad field."""
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8")
    end = text.find("\n")
    if end < 0:
        raise ChannelFileError("byte 0: missing metadata header line")
    try:
        meta = json.loads(text[:end])
    except json.JSONDecodeError as exc:
        raise ChannelFileError(f"byte {exc.pos}: metadata header is not valid JSON ({exc.msg})") from exc
    for key, typ in _META_KEYS.items():
        if key not in meta:
            raise ChannelFileError(f"byte 0: metadata field '{key}' missing")
        if typ is float and isinstance(meta[key], int):
            continue
        if not isinstance(meta[key], typ):
            raise ChannelFileError(f"byte 0: metadata field '{key}' has wrong type")
    if meta["format_version"] != FORMAT_VERSION:
        raise ChannelFileError(f"byte 0: unsupported format_version {meta['format_version']}")
    T, K, N, M = meta["T"], meta["K"], meta["N"], meta["M"]
    if len(meta["distances"]) != K or len(meta["pathloss_db"]) != K:
        raise ChannelFileError(
            f"byte 0: field 'K'={K} disagrees with {len(meta['distances'])} distances")

    H = np.empty((T, K, N, M), dtype=complex)
    seen = np.zeros((T, K, N, M), dtype=bool)
    offset = len(text[:end + 1].encode())
    body = text[end + 1:].split("\n")
    if not body or body[0] != CSV_HEADER:
        raise ChannelFileError(f"byte {offset}: expected CSV header '{CSV_HEADER}'")
    offset += len(body[0]) + 1
    bounds = (T, K, N, M)
    names = ("t", "k", "row", "col")
    for line in body[1:]:
        if line == "":
            offset += 1
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ChannelFileError(f"byte {offset}: expected 6 fields, found {len(parts)}")
        pos = offset
        idx = []
        for name, part, bound in zip(names, parts[:4], bounds):
            try:
                v = int(part)
            except ValueError:
                raise ChannelFileError(f"byte {pos}: field '{name}' is not an integer: {part!r}") from None
            if not 0 <= v < bound:
                raise ChannelFileError(f"byte {pos}: field '{name}'={v} outside [0, {bound})")
            idx.append(v)
            pos += len(part) + 1
        vals = []
        for name, part in zip(("re", "im"), parts[4:]):
            try:
                vals.append(float(part))
            except ValueError:
                raise ChannelFileError(f"byte {pos}: field '{name}' is not a number: {part!r}") from None
            pos += len(part) + 1
        H[tuple(idx)] = complex(vals[0], vals[1])
        seen[tuple(idx)] = True
        offset += len(line.encode()) + 1
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise ChannelFileError(
            f"byte {len(raw)}: truncated body, entry (t,k,row,col)={tuple(int(i) for i in missing)} missing")
    return ChannelSet(
        H, np.asarray(meta["distances"], dtype=float), np.asarray(meta["pathloss_db"], dtype=float),
        float(meta["antenna_gain_db"]), meta["seed"], meta.get("stream", 0), meta["G"],
        meta.get("fingerprint", ""), meta.get("generator", GENERATOR),
    )
