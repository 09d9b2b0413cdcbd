"""Matrix container helpers, seeded input generators and the MRT1 file format.

Matrices are plain 2D ``numpy.ndarray`` objects (C order, float64 by default).

MRT1 layout (all integers little-endian)::

    bytes 0-3   ASCII "MRT1"
    byte  4     dtype code, 1 = f32, 2 = f64
    byte  5     ndim, always 2
    bytes 6-7   zero padding
    ndim x u64  dims
    payload     row-major IEEE-754 values

Random streams
--------------
Generators draw from numpy's ``PCG64`` bit generator (PCG XSL-RR 128/64,
seeded through ``SeedSequence``).  Only the raw 64-bit output words are
used, so results do not depend on numpy's distribution code:

* uniform: ``u = (w >> 11) * 2**-53`` in ``[0, 1)``
* normal: Box-Muller on consecutive word pairs ``(w1, w2)``:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; one normal per pair.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MRT1"
HEADER_SIZE = 8
CSV_MAX_ENTRIES = 10**6

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class ErrorCode(enum.Enum):
    TRUNCATED_HEADER = "truncated header"
    BAD_MAGIC = "bad magic"
    BAD_DTYPE = "bad dtype"
    BAD_NDIM = "bad ndim"
    DIMS_OVERFLOW = "dims overflow"
    TRUNCATED_PAYLOAD = "truncated payload"
    TRAILING_BYTES = "trailing bytes"
    NON_FINITE = "non-finite values"
    BAD_CSV = "bad csv"


class TensorFormatError(ValueError):
    """Raised when a tensor file cannot be decoded."""

    def __init__(self, code: ErrorCode, detail: str = ""):
        self.code = code
        msg = code.value if not detail else f"{code.value}: {detail}"
        super().__init__(msg)


def as_matrix(data, dtype=np.float64) -> np.ndarray:
    """Validate and return ``data`` as a finite, C-ordered 2D array."""
    m = np.ascontiguousarray(data, dtype=dtype)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def write_tensor(m: np.ndarray, path) -> None:
    """Write ``m`` to ``path``; ``.csv`` suffix selects CSV, else MRT1."""
    path = Path(path)
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("only 2D matrices can be written")
    if path.suffix.lower() == ".csv":
        if m.size > CSV_MAX_ENTRIES:
            raise ValueError(f"CSV output limited to {CSV_MAX_ENTRIES} entries")
        lines = (",".join(repr(float(v)) for v in row) for row in m)
        path.write_text("\n".join(lines) + "\n")
        return
    code = _CODE_FOR_DTYPE.get(m.dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {m.dtype}; use float32 or float64")
    header = MAGIC + struct.pack("<BBxx", code, 2) + struct.pack("<QQ", *m.shape)
    payload = np.ascontiguousarray(m, dtype=_DTYPE_CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    """Read an MRT1 or CSV matrix from ``path``.

    MRT1 files are returned with their stored dtype; CSV is parsed as f64.
    """
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".csv":
        return _parse_csv(raw.decode("utf-8", errors="replace"))
    return decode_mrt1(raw)


def decode_mrt1(raw: bytes) -> np.ndarray:
    if len(raw) < HEADER_SIZE:
        raise TensorFormatError(ErrorCode.TRUNCATED_HEADER, f"{len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise TensorFormatError(ErrorCode.BAD_MAGIC, repr(raw[:4]))
    code, ndim = raw[4], raw[5]
    if code not in _DTYPE_CODES:
        raise TensorFormatError(ErrorCode.BAD_DTYPE, str(code))
    if ndim != 2:
        raise TensorFormatError(ErrorCode.BAD_NDIM, str(ndim))
    dims_end = HEADER_SIZE + 8 * ndim
    if len(raw) < dims_end:
        raise TensorFormatError(ErrorCode.TRUNCATED_HEADER, "missing dims")
    rows, cols = struct.unpack_from("<QQ", raw, HEADER_SIZE)
    dtype = _DTYPE_CODES[code]
    if rows == 0 or cols == 0:
        raise TensorFormatError(ErrorCode.DIMS_OVERFLOW, f"zero dim {rows}x{cols}")
    # Python ints do not overflow; compare against the actual byte budget.
    nbytes = rows * cols * dtype.itemsize
    if nbytes > 2**62:
        raise TensorFormatError(ErrorCode.DIMS_OVERFLOW, f"{rows}x{cols}")
    body = len(raw) - dims_end
    if body < nbytes:
        raise TensorFormatError(
            ErrorCode.TRUNCATED_PAYLOAD, f"expected {nbytes} bytes, found {body}"
        )
    if body > nbytes:
        raise TensorFormatError(ErrorCode.TRAILING_BYTES, f"{body - nbytes} extra")
    m = np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=dims_end)
    m = m.reshape(rows, cols).astype(dtype.newbyteorder("="), copy=True)
    if not np.all(np.isfinite(m)):
        raise TensorFormatError(ErrorCode.NON_FINITE)
    return m


def _parse_csv(text: str) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise TensorFormatError(ErrorCode.BAD_CSV, "empty file")
    try:
        values = [[float(tok) for tok in line.split(",")] for line in rows]
    except ValueError as exc:
        raise TensorFormatError(ErrorCode.BAD_CSV, str(exc)) from None
    width = len(values[0])
    if any(len(r) != width for r in values):
        raise TensorFormatError(ErrorCode.BAD_CSV, "ragged rows")
    if len(values) * width > CSV_MAX_ENTRIES:
        raise TensorFormatError(ErrorCode.BAD_CSV, "too many entries for CSV")
    m = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise TensorFormatError(ErrorCode.NON_FINITE)
    return m


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class RandomStream:
    """Platform-stable uniform and normal draws from raw PCG64 words."""

    def __init__(self, seed: int):
        self._bits = np.random.PCG64(seed)

    def words(self, count: int) -> np.ndarray:
        return self._bits.random_raw(count).astype(np.uint64)

    def uniform(self, count: int) -> np.ndarray:
        return (self.words(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, count: int) -> np.ndarray:
        u = self.uniform(2 * count)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class GeneratorSpec:
    """Synthetic Q/K/V recipe.

    ``gaussian`` uses ``sigma``; ``clustered`` uses ``clusters`` and ``tau``;
    ``peaked`` uses ``gain``.
    """

    kind: str
    n: int
    d: int
    seed: int = 0
    sigma: float = 1.0
    clusters: int = 1
    tau: float = 0.1
    gain: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("gaussian", "clustered", "peaked"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.kind == "clustered":
            if not 1 <= self.clusters <= self.n:
                raise ValueError("clusters must lie in [1, n]")
            if self.tau < 0:
                raise ValueError("tau must be >= 0")
        if self.kind == "peaked" and not self.gain > 0:
            raise ValueError("gain must be > 0")


def generate(spec: GeneratorSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return deterministic ``(Q, K, V)`` matrices of shape ``n x d``.

    * gaussian: every entry ``sigma * N(0, 1)``.
    * clustered: rows are split into ``clusters`` contiguous runs (row ``i``
      belongs to run ``i * clusters // n``); Q and K rows are their run's
      ``N(0, 1)`` centre plus ``tau * N(0, 1)`` noise; V is ``N(0, 1)``.
    * peaked: Q and K are ``sqrt(gain) * N(0, 1) / d**0.25`` so logits are
      ``gain`` times a unit-variance score; V is ``N(0, 1)``.

    Draw order is fixed: Q stream, then K stream, then V, each row-major.
    Noise is drawn even when tau is 0, so the centres do not depend on tau.
    """
    spec.validate()
    n, d = spec.n, spec.d
    rs = RandomStream(spec.seed)

    def normals() -> np.ndarray:
        return rs.normal(n * d).reshape(n, d)

    if spec.kind == "gaussian":
        q, k, v = (spec.sigma * normals() for _ in range(3))
        return q, k, v
    if spec.kind == "peaked":
        scale = math.sqrt(spec.gain) / d**0.25
        q = scale * normals()
        k = scale * normals()
        return q, k, normals()
    labels = np.arange(n) * spec.clusters // n
    mats = []
    for _ in range(2):
        centres = rs.normal(spec.clusters * d).reshape(spec.clusters, d)
        noise = normals()
        mats.append(centres[labels] + spec.tau * noise)
    return mats[0], mats[1], normals()
