"""Fully connected tanh networks over a flat parameter vector.

Parameter layout: for each layer in input-to-output order, the row-major
``(fan_out, fan_in)`` weight block followed by the ``fan_out`` bias block.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Jet2, Var, jet_linear, jet_tanh, linear, tanh
from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    SpecMismatchError,
    StructuralError,
)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_layers or min(self.hidden_layers) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.output_dim != 1:
            raise ValueError("only scalar-output networks are supported")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def describe(self) -> str:
        return "x".join(str(w) for w in self.widths)


def _layers(params, spec: NetworkSpec):
    """Yield ``(W, b)`` per layer, as Var segments or ndarray views."""
    offset = 0
    for fan_out, fan_in in spec.layer_shapes():
        n_w = fan_out * fan_in
        if isinstance(params, Var):
            w = params.segment(offset, (fan_out, fan_in))
            b = params.segment(offset + n_w, (fan_out,))
        else:
            w = params[offset:offset + n_w].reshape(fan_out, fan_in)
            b = params[offset + n_w:offset + n_w + fan_out]
        offset += n_w + fan_out
        yield w, b


def _check_params(params, spec: NetworkSpec) -> None:
    n = params.value.shape[0] if isinstance(params, Var) else np.shape(params)[0]
    if n != spec.n_params:
        raise StructuralError(f"parameter vector has {n} entries, spec {spec.describe()} needs {spec.n_params}")


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_out, fan_in in spec.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _affine(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ w.T + b


def _prepare(params, spec: NetworkSpec, x):
    _check_params(params, spec)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[-1] != spec.input_dim:
        raise StructuralError(f"input has {xb.shape[-1]} coordinates, network expects {spec.input_dim}")
    return xb, single


def forward(params, spec: NetworkSpec, x) -> np.ndarray | float:
    """Plain network evaluation.

    ``x`` is either one input vector (returns a float) or a ``(B, input_dim)``
    batch (returns shape ``(B,)``).
    """
    a, single = _prepare(params, spec, x)
    layers = list(_layers(np.asarray(params, dtype=np.float64), spec))
    for w, b in layers[:-1]:
        z = a @ w.T
        z += b
        a = np.tanh(z, out=z)
    w, b = layers[-1]
    out = _affine(a, w, b)[:, 0]
    return float(out[0]) if single else out


def _jet_pass(layers, x: np.ndarray, seed_dims: Sequence[int], keep: bool):
    """Propagate (value, d1, d2) through the tanh MLP.

    First and second derivative stacks travel together as one ``(2d, B, n)``
    array so each layer needs two matmuls.  Returns the output rows
    ``[value, d1..., d2...]`` as ``(1 + 2d, B)`` and, when ``keep`` is set,
    the per-layer cache for :func:`_jet_backward`.
    """
    d = len(seed_dims)
    B = x.shape[0]
    a = x
    a12 = np.zeros((2 * d, B, x.shape[1]), dtype=x.dtype)
    for k, i in enumerate(seed_dims):
        a12[k, :, i] = 1.0
    cache = []
    for w, b in layers[:-1]:
        wt = w.T
        z = a @ wt
        z += b
        z12 = a12 @ wt
        t = np.tanh(z, out=z)
        s = t * t
        np.subtract(1.0, s, out=s)
        t2 = t * 2.0
        n12 = np.empty_like(z12)
        n1, n2 = n12[:d], n12[d:]
        z1, z2 = z12[:d], z12[d:]
        np.multiply(s, z1, out=n1)
        np.multiply(s, z2, out=n2)
        tmp = n1 * z1
        tmp *= t2
        n2 -= tmp
        if keep:
            cache.append((a, a12, t, s, t2, z12))
        a, a12 = t, n12
    w, b = layers[-1]
    out = np.empty((1 + 2 * d, B))
    out[0] = (a @ w.T)[:, 0] + b[0]
    out[1:] = (a12 @ w.T)[..., 0]
    if keep:
        cache.append((a, a12))
    return out, cache


def _wgrad(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sum over leading axes of g^T a, i.e. a weight-gradient contribution."""
    return g.reshape(-1, g.shape[-1]).T @ a.reshape(-1, a.shape[-1])


def _jet_backward(layers, cache, g_out: np.ndarray, d: int) -> list[np.ndarray]:
    """Adjoint of :func:`_jet_pass` with respect to every (W, b).

    Per hidden layer, with ``t = tanh(z)``, ``s = 1 - t^2`` and incoming
    adjoints ``(ga, ga1, ga2)`` of ``(t, s z1, s z2 - 2 t s z1^2)``::

        gz1 = s (ga1 - 4 t z1 ga2)
        gz2 = s ga2
        gz  = s (ga - 2 s sum(z1^2 ga2) - 2 t sum(z1 ga1 + z2 ga2 - 2 t z1^2 ga2))
    """
    grads: list[np.ndarray] = []
    w, _ = layers[-1]
    a, a12 = cache[-1]
    g_out = g_out.astype(w.dtype, copy=False)
    gv = g_out[0][:, None]
    g12 = g_out[1:][..., None]
    grads.append(gv.sum(axis=0))
    grads.append(_wgrad(gv, a) + _wgrad(g12, a12))
    ga = gv @ w
    G12 = g12 @ w
    for idx in range(len(layers) - 2, -1, -1):
        w, _ = layers[idx]
        a, a12, t, s, t2, z12 = cache[idx]
        ga1, ga2 = G12[:d], G12[d:]
        z1, z2 = z12[:d], z12[d:]
        q = z1 * ga2            # z1 ga2
        p = t2 * q              # 2 t z1 ga2
        gz12 = np.empty_like(G12)
        gz1, gz2 = gz12[:d], gz12[d:]
        # gz1 = s (ga1 - 2p)
        np.subtract(ga1, p, out=gz1)
        gz1 -= p
        gz1 *= s
        np.multiply(s, ga2, out=gz2)
        # gs = z1 (ga1 - p) + z2 ga2 ; u = z1 q
        np.subtract(ga1, p, out=p)
        p *= z1
        z2g = z2 * ga2
        p += z2g
        gs = p.sum(axis=0) if d > 1 else p[0]
        q *= z1
        q *= 2.0
        u = q.sum(axis=0) if d > 1 else q[0]
        # gt = ga - s*2u - t2*gs ; gz = gt*s
        u *= s
        gz = ga - u
        gs *= t2
        gz -= gs
        gz *= s
        grads.append(gz.sum(axis=0))
        grads.append(_wgrad(gz, a) + _wgrad(gz12, a12))
        if idx > 0:
            ga = gz @ w
            G12 = gz12 @ w
    # collected output-to-input as (b, W) pairs; flatten back to storage order
    flat = []
    for gb, gw in reversed(list(zip(grads[0::2], grads[1::2]))):
        flat.append(gw.reshape(-1))
        flat.append(gb)
    return flat


def forward_jets(params, spec: NetworkSpec, x, seed_dims: Sequence[int] | None = None,
                 dtype=np.float64) -> Jet2:
    """Network value with first and pure second derivatives.

    ``params`` may be an ndarray or a :class:`Var` (for parameter gradients).
    ``seed_dims`` picks which input coordinates are differentiated (default:
    all).  Returned jet fields have shapes ``value: (B,)``, ``d1, d2: (d, B)``,
    or a float and ``(d,)`` vectors for a single input vector.  ``dtype`` sets
    the internal compute precision; results and gradients are float64.
    """
    xb, single = _prepare(params, spec, x)
    if seed_dims is None:
        seed_dims = range(spec.input_dim)
    seed_dims = list(seed_dims)
    if any(i < 0 or i >= spec.input_dim for i in seed_dims):
        raise StructuralError(f"seed dims {seed_dims} out of range")
    d = len(seed_dims)
    xb = xb.astype(dtype, copy=False)
    if isinstance(params, Var):
        layers = list(_layers(params.value.astype(dtype, copy=False), spec))
        out, cache = _jet_pass(layers, xb, seed_dims, keep=True)

        def backward(g):
            return [np.concatenate(_jet_backward(layers, cache, g, d)).astype(np.float64, copy=False)]

        stacked = Var(out.astype(np.float64, copy=False), (params,), backward)
    else:
        layers = list(_layers(np.asarray(params, dtype=np.float64).astype(dtype, copy=False), spec))
        stacked, _ = _jet_pass(layers, xb, seed_dims, keep=False)
        stacked = stacked.astype(np.float64, copy=False)
    if single:
        jet = Jet2(stacked[0, 0], stacked[1:1 + d, 0], stacked[1 + d:, 0])
        return jet if isinstance(params, Var) else Jet2(float(jet.value), jet.d1, jet.d2)
    return Jet2(stacked[0], stacked[1:1 + d], stacked[1 + d:])


def forward_jets_generic(params, spec: NetworkSpec, x, seed_dims: Sequence[int] | None = None) -> Jet2:
    """Same as :func:`forward_jets` but composed from the elementary jet ops.

    Slower; kept as an independent route for cross-checking the fused pass.
    """
    xb, _ = _prepare(params, spec, x)
    seed_dims = list(range(spec.input_dim) if seed_dims is None else seed_dims)
    d1 = np.zeros((len(seed_dims),) + xb.shape)
    for k, i in enumerate(seed_dims):
        d1[k, :, i] = 1.0
    jet = Jet2(xb, d1, np.zeros_like(d1))
    layers = list(_layers(params, spec))
    for w, b in layers[:-1]:
        jet = jet_tanh(jet_linear(jet, w, b))
    w, b = layers[-1]
    out = jet_linear(jet, w, b)
    return Jet2(out.value[..., 0], out.d1[..., 0], out.d2[..., 0])


def forward_var(params: Var, spec: NetworkSpec, x: np.ndarray) -> Var:
    """Batched value-only evaluation on the reverse-mode graph."""
    layers = list(_layers(params, spec))
    a = x
    for w, b in layers[:-1]:
        a = tanh(linear(a, w, b))
    w, b = layers[-1]
    return linear(a, w, b)[:, 0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"TPINNCK\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")  # magic, version, header byte length


def _encode_header(spec: NetworkSpec, metadata: dict, n_params: int) -> bytes:
    lines = [
        f"input_dim={spec.input_dim}",
        f"hidden_layers={','.join(str(w) for w in spec.hidden_layers)}",
        f"output_dim={spec.output_dim}",
        f"activation={spec.activation}",
        f"n_params={n_params}",
    ]
    for key in sorted(metadata):
        value = str(metadata[key])
        if "\n" in value or "=" in key or "\n" in key:
            raise ValueError(f"metadata entry {key!r} cannot be stored as key=value text")
        lines.append(f"meta.{key}={value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_checkpoint(path, params, spec: NetworkSpec, metadata: dict | None = None) -> Path:
    """Write a self-describing checkpoint (header, LE float64 payload, CRC-32)."""
    params = np.asarray(params, dtype=np.float64)
    _check_params(params, spec)
    header = _encode_header(spec, metadata or {}, params.shape[0])
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + params.astype("<f8").tobytes()
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return path


@dataclass
class Checkpoint:
    params: np.ndarray
    spec: NetworkSpec
    metadata: dict = field(default_factory=dict)


def load_checkpoint(path, expected_input_dim: int | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointTruncatedError(f"{path}: file shorter than the fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, reader supports {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    fields = {}
    for line in blob[start:start + header_len].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        n_params = int(fields["n_params"])
        spec = NetworkSpec(
            input_dim=int(fields["input_dim"]),
            hidden_layers=tuple(int(w) for w in fields["hidden_layers"].split(",")),
            output_dim=int(fields["output_dim"]),
            activation=fields["activation"],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    payload_start = start + header_len
    expected = payload_start + 8 * n_params + 4
    if len(blob) < expected:
        raise CheckpointTruncatedError(f"{path}: expected {expected} bytes, found {len(blob)}")
    if len(blob) > expected:
        raise CheckpointError(f"{path}: {len(blob) - expected} trailing bytes")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if zlib.crc32(blob[:expected - 4]) & 0xFFFFFFFF != crc:
        raise CheckpointChecksumError(f"{path}: CRC-32 mismatch")
    params = np.frombuffer(blob, dtype="<f8", count=n_params, offset=payload_start).astype(np.float64)
    if n_params != spec.n_params:
        raise CheckpointError(f"{path}: {n_params} parameters for spec {spec.describe()}")
    if expected_input_dim is not None and spec.input_dim != expected_input_dim:
        raise SpecMismatchError(
            f"{path}: network takes {spec.input_dim} inputs, problem needs {expected_input_dim}"
        )
    metadata = {k[5:]: v for k, v in fields.items() if k.startswith("meta.")}
    return Checkpoint(params, spec, metadata)
