"""Dense linear algebra helpers, activations, Adadelta, gradient checking and
parameter (de)serialisation.

Matrices are plain 2-D numpy arrays in the global precision (see
:mod:`ctxmine.config`).
"""

import io
import json
import struct

import numpy as np

from . import config
from .errors import DimensionError, DivergenceError, EvaluationError, ParseError

MAGIC = b"BTF1"

RHO = 0.95
EPS = 1e-6
INIT_SCALE = 0.08
CLIP_NORM = 1.0


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(x):
    x = np.asarray(x)
    if x.size == 0:
        raise DimensionError(f"softmax of empty matrix {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(x, kind):
    x = np.asarray(x)
    if x.size == 0:
        raise DimensionError(f"cannot activate empty matrix {x.shape}")
    if kind == "softmax_rows":
        return softmax_rows(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


class Rng:
    """Seeded uniform source; PCG64 gives identical streams on every platform."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def draw(self, shape, scale):
        if scale <= 0:
            raise ValueError("scale must be positive")
        return self._gen.uniform(-scale, scale, size=shape).astype(config.dtype())

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    @property
    def generator(self):
        return self._gen


def rng_draw(rng, shape, scale):
    return rng.draw(shape, scale)


class Param:
    """A trainable matrix with its gradient and Adadelta accumulators."""

    __slots__ = ("name", "value", "grad", "acc_grad", "acc_delta")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=config.dtype())
        self.grad = np.zeros_like(self.value)
        self.acc_grad = np.zeros_like(self.value)
        self.acc_delta = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def adadelta_step(p, rho=RHO, eps=EPS, lr=1.0):
    if not (0.0 < rho < 1.0) or eps <= 0:
        raise ValueError(f"bad Adadelta constants rho={rho} eps={eps}")
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite gradient in {p.name}")
    p.acc_grad *= rho
    p.acc_grad += (1.0 - rho) * g * g
    delta = -np.sqrt(p.acc_delta + eps) / np.sqrt(p.acc_grad + eps) * g
    p.acc_delta *= rho
    p.acc_delta += (1.0 - rho) * delta * delta
    p.value += lr * delta
    g.fill(0.0)


def clip_global_norm(params, max_norm=CLIP_NORM):
    """Rescale all gradients in place so their joint L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if not np.isfinite(total):
        raise DivergenceError("non-finite gradient norm")
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


def finite_diff_check(model_loss, params, h=1e-5, return_details=False):
    """Compare analytic gradients against central differences.

    ``model_loss()`` must return the scalar loss and leave analytic gradients
    in ``p.grad`` for every param. Returns the worst relative error, with the
    denominator floored at 1e-8.
    """
    for p in params:
        p.zero_grad()
    base = model_loss()
    if not np.isfinite(base):
        raise EvaluationError("loss is not finite at the base point")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    where = None
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        ga = ga.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = model_loss()
            flat[k] = old - h
            down = model_loss()
            flat[k] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise EvaluationError(f"loss is not finite perturbing {p.name}[{k}]")
            num = (up - down) / (2.0 * h)
            denom = max(abs(ga[k]), abs(num), 1e-8)
            err = abs(ga[k] - num) / denom
            if err > worst:
                worst = err
                where = (p.name, k, float(ga[k]), float(num))
    for p in params:
        p.zero_grad()
    if return_details:
        return worst, where
    return worst


# ---------------------------------------------------------------------------
# BTF1 container: magic, u32 header length, JSON header, little-endian payload
# ---------------------------------------------------------------------------


def save_arrays(path_or_file, arrays, precision=None, seed=None, meta=None):
    precision = precision or config.precision()
    dt = np.dtype("<f4" if precision == "f32" else "<f8")
    registry = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        registry.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * dt.itemsize
    header = {"format": "BTF1", "precision": precision, "seed": seed,
              "shapes": registry, "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def load_arrays(path_or_file):
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
        name = "<stream>"
    else:
        name = str(path_or_file)
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    if data[:4] != MAGIC:
        raise ParseError("not a BTF1 container", name)
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hlen].decode("utf-8"))
    dt = np.dtype("<f4" if header["precision"] == "f32" else "<f8")
    payload = data[8 + hlen:]
    arrays = {}
    for entry in header["shapes"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise ParseError(f"truncated payload for {entry['name']}", name)
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype=dt).reshape(entry["shape"]).copy()
    return arrays, header
