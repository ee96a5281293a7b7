"""Small tanh MLP with hand-written backward pass, Adam, and checkpoints.

Checkpoint layout (little-endian):

    b"ODACKPT1\\n"                 magic and format version
    uint64                          length of the JSON header in bytes
    JSON header                     {"meta": ..., "tensors": [{name, shape, offset}]}
    float64 blocks                  row-major tensor data, offsets relative to here
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ContractViolation

MAGIC = b"ODACKPT1\n"


@dataclass(eq=False)
class MlpParams:
    in_dim: int
    hidden: tuple
    out_dim: int
    weights: list
    biases: list
    # bumped on every in-place update so stale forward caches are detected
    version: int = 0

    @property
    def sizes(self):
        return (self.in_dim, *self.hidden, self.out_dim)

    def tensors(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MlpParams(self.in_dim, tuple(self.hidden), self.out_dim,
                         [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                         self.version)

    def num_params(self):
        return sum(t.size for t in self.tensors())


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


def init_mlp(in_dim, hidden, out_dim, rng, final_scale=1.0, gain=np.sqrt(2.0)):
    """Orthogonal weights, zero biases; the last layer is scaled by ``final_scale``."""
    sizes = (int(in_dim), *[int(h) for h in hidden], int(out_dim))
    weights, biases = [], []
    for j, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = j == len(sizes) - 2
        weights.append(_orthogonal(rng, a, b, final_scale if last else gain))
        biases.append(np.zeros(b))
    return MlpParams(sizes[0], tuple(sizes[1:-1]), sizes[-1], weights, biases)


@dataclass(eq=False)
class ForwardCache:
    params_id: int
    version: int
    single: bool
    acts: list = field(default_factory=list)


def forward(p, x):
    """Affine + tanh hidden layers and a linear output layer.

    ``x`` may be a vector or a batch of row vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != p.in_dim:
        raise ContractViolation(f"input shape {x.shape} does not match in_dim {p.in_dim}")
    cache = ForwardCache(id(p), p.version, single, [h])
    n = len(p.weights)
    for j, (W, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ W + b
        if j < n - 1:
            h = np.tanh(h)
        cache.acts.append(h)
    return (h[0] if single else h), cache


def backward(p, cache, grad_out):
    """Reverse pass; returns ``(grads, grad_input)`` with grads aligned to tensors()."""
    if cache.params_id != id(p) or cache.version != p.version:
        raise ContractViolation("forward cache is stale for these parameters")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.acts[-1].shape:
        raise ContractViolation(f"output gradient shape {g.shape} does not match "
                                f"{cache.acts[-1].shape}")
    n = len(p.weights)
    grads = [None] * (2 * n)
    for j in range(n - 1, -1, -1):
        if j < n - 1:
            g = g * (1.0 - cache.acts[j + 1] ** 2)
        grads[2 * j] = cache.acts[j].T @ g
        grads[2 * j + 1] = g.sum(axis=0)
        g = g @ p.weights[j].T
    return grads, (g[0] if cache.single else g)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass(eq=False)
class Adam:
    """Bias-corrected Adam over a list of arrays updated in place."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = None
    v: list = None
    skipped: int = 0

    def step(self, tensors, grads):
        """Apply one update; returns False (and changes nothing) on a non-finite gradient."""
        if len(tensors) != len(grads):
            raise ContractViolation("parameter and gradient lists differ in length")
        for p_, g in zip(tensors, grads):
            if p_.shape != np.shape(g):
                raise ContractViolation(f"gradient shape {np.shape(g)} != {p_.shape}")
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        if self.m is None:
            self.m = [np.zeros_like(p_) for p_ in tensors]
            self.v = [np.zeros_like(p_) for p_ in tensors]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p_, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p_ -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_tensors(self, prefix):
        if self.m is None:
            return {}
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def state_meta(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "skipped": self.skipped, "has_moments": self.m is not None}

    @classmethod
    def from_state(cls, meta, tensors, prefix, n):
        opt = cls(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                  t=meta["t"], skipped=meta["skipped"])
        if meta["has_moments"]:
            opt.m = [tensors[f"{prefix}.m{i}"].copy() for i in range(n)]
            opt.v = [tensors[f"{prefix}.v{i}"].copy() for i in range(n)]
        return opt


# checkpoints ----------------------------------------------------------------

def dumps_checkpoint(tensors, meta):
    """Serialize ``{name: array}`` plus JSON-able ``meta`` to bytes."""
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"meta": meta, "tensors": entries, "data_bytes": offset},
                        sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def loads_checkpoint(data):
    """Inverse of ``dumps_checkpoint``; raises CheckpointError on any corruption."""
    if not data.startswith(MAGIC):
        raise CheckpointError("not an odassign checkpoint (bad magic or version)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError("checkpoint truncated in header")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    if len(data) < pos + hlen:
        raise CheckpointError("checkpoint truncated in header")
    try:
        header = json.loads(data[pos:pos + hlen])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint header unreadable: {exc}") from None
    pos += hlen
    body = data[pos:]
    if len(body) != header.get("data_bytes"):
        raise CheckpointError(f"checkpoint data has {len(body)} bytes, header says "
                              f"{header.get('data_bytes')}")
    tensors = {}
    for ent in header["tensors"]:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) * 8
        lo = ent["offset"]
        if lo < 0 or lo + n > len(body):
            raise CheckpointError(f"tensor {ent['name']} lies outside the data block")
        tensors[ent["name"]] = np.frombuffer(body[lo:lo + n], dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]


def params_meta(p):
    return {"in_dim": p.in_dim, "hidden": list(p.hidden), "out_dim": p.out_dim}


def params_tensors(p, prefix):
    out = {}
    for j, (W, b) in enumerate(zip(p.weights, p.biases)):
        out[f"{prefix}.W{j}"] = W
        out[f"{prefix}.b{j}"] = b
    return out


def params_from(meta, tensors, prefix):
    sizes = (meta["in_dim"], *meta["hidden"], meta["out_dim"])
    weights, biases = [], []
    for j, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        try:
            W, bias = tensors[f"{prefix}.W{j}"], tensors[f"{prefix}.b{j}"]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]}") from None
        if W.shape != (a, b) or bias.shape != (b,):
            raise CheckpointError(f"layer {j} of {prefix} has shape {W.shape}, expected {(a, b)}")
        weights.append(W)
        biases.append(bias)
    return MlpParams(meta["in_dim"], tuple(meta["hidden"]), meta["out_dim"], weights, biases)


def serialize_params(p):
    return dumps_checkpoint(params_tensors(p, "net"), {"kind": "mlp", "arch": params_meta(p)})


def deserialize_params(data):
    tensors, meta = loads_checkpoint(data)
    if meta.get("kind") != "mlp":
        raise CheckpointError(f"checkpoint kind {meta.get('kind')!r} is not 'mlp'")
    return params_from(meta["arch"], tensors, "net")
