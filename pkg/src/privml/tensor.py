"""Dense float64 tensors, a reproducible counter-based RNG and the tensor codec.

Tensors are plain C-contiguous ``numpy.float64`` arrays. The RNG is
splitmix64 used in counter mode: draw ``i`` of a stream seeded with ``s`` is
``mix(s + (i + 1) * GOLDEN)``. Because every draw depends only on the seed and
its index, streams are vectorisable, identical on every platform, and cheap to
fork into independent substreams keyed by a tag.
"""

import hashlib
import math
import struct

import numpy as np

from .errors import FormatError, ShapeError

__all__ = [
    "Rng",
    "as_tensor",
    "decode_tensor",
    "encode_tensor",
    "rng_normal",
    "rng_uniform",
    "splitmix64",
    "tensor_add",
    "tensor_matmul",
]

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def as_tensor(x, name="tensor"):
    """Coerce ``x`` to a finite C-contiguous float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


def tensor_add(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("tensor_add", a.shape, b.shape)
    return _check_finite(a + b, "tensor_add")


def tensor_matmul(a, b):
    """Matrix product of an ``m x k`` and a ``k x n`` tensor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("tensor_matmul", a.shape, b.shape)
    return _check_finite(np.matmul(a, b), "tensor_matmul")


def splitmix64(seed, index):
    """Scalar reference: draw number ``index`` (0-based) of the stream ``seed``."""
    z = (seed + (index + 1) * GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _tag_bits(tag):
    if isinstance(tag, int):
        tag = str(tag)
    digest = hashlib.blake2b(str(tag).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Single-owner splitmix64 stream.

    ``seed`` fixes the stream and ``counter`` counts draws already consumed.
    Not thread-safe; fork with :meth:`child` instead of sharing.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"

    def raw(self, n):
        """Next ``n`` 64-bit outputs as a uint64 array."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = idx * np.uint64(GOLDEN) + np.uint64(self.seed)
            return _mix_array(z)

    def next_u64(self):
        out = splitmix64(self.seed, self.counter)
        self.counter += 1
        return out

    def random(self, n):
        """``n`` doubles in [0, 1) built from the top 53 bits of each draw."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def below(self, bound):
        """Integer uniform on ``[0, bound)`` via a 64x64->128 multiply-shift."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * bound) >> 64

    def child(self, *tags):
        """Independent substream keyed by ``tags``; does not advance ``self``."""
        seed = self.seed
        for tag in tags:
            seed = splitmix64(seed ^ _tag_bits(tag), 0)
        return Rng(seed)


def _shape_tuple(shape):
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(d) for d in shape)
    if any(d < 0 for d in shape):
        raise ShapeError("rng", shape)
    return shape


def rng_uniform(rng, shape, lo=0.0, hi=1.0):
    """Uniform draws on ``[lo, hi)`` filled in row-major order."""
    shape = _shape_tuple(shape)
    u = rng.random(math.prod(shape))
    return (lo + (hi - lo) * u).reshape(shape)


def rng_normal(rng, shape, mean=0.0, std=1.0):
    """Standard normal draws via the Box-Muller transform.

    Uniform pairs ``(u1, u2)`` yield ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)``
    with ``r = sqrt(-2 ln(1 - u1))``; an odd trailing sin value is dropped.
    """
    shape = _shape_tuple(shape)
    n = math.prod(shape)
    pairs = (n + 1) // 2
    u = rng.random(2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(theta)
    z[:, 1] = r * np.sin(theta)
    return (mean + std * z.reshape(-1)[:n]).reshape(shape)


# -- binary codec ------------------------------------------------------------
# rank:u64le | dims:u64le * rank | data:f64le * prod(dims)


def encode_tensor(t):
    arr = np.asarray(t, dtype=np.float64)
    head = struct.pack(f"<Q{arr.ndim}Q", arr.ndim, *arr.shape)
    return head + arr.astype("<f8", copy=False).tobytes(order="C")


def decode_tensor(buf, offset=0):
    """Decode one tensor from ``buf`` at ``offset``; returns ``(tensor, end)``."""
    view = memoryview(buf)
    if len(view) - offset < 8:
        raise FormatError("truncated tensor header")
    (rank,) = struct.unpack_from("<Q", view, offset)
    if rank > 32:
        raise FormatError(f"implausible tensor rank {rank}")
    offset += 8
    if len(view) - offset < 8 * rank:
        raise FormatError("truncated tensor shape")
    shape = struct.unpack_from(f"<{rank}Q", view, offset)
    offset += 8 * rank
    nbytes = 8 * math.prod(shape)
    if len(view) - offset < nbytes:
        raise FormatError("truncated tensor data")
    data = np.frombuffer(view[offset:offset + nbytes], dtype="<f8")
    return data.astype(np.float64).reshape(shape), offset + nbytes
