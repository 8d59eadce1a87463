"""Permutation-equivariant water-level network.

Each RB carries a feature vector; a layer maps ``x`` (``n_rb x d_in``) to
``x @ W_elem + mean_rows(x) @ W_agg + b``, which commutes with any
permutation of the RBs. Hidden layers use tanh. The last layer emits one
scalar per RB; these are averaged, passed through a ReLU and scaled to a
water level in watts, and the per-RB power is ``max(0, w - 1/gamma)``.

The input feature of an RB is ``log(gamma / gamma_ref)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..allocator import waterfill_at_level

__all__ = [
    "DEFAULT_DIMS",
    "PolicyParams",
    "water_level",
    "pe_forward",
    "forward_cached",
    "level_vjp",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_DIMS = (1, 256, 512, 512, 256, 1)
CHECKPOINT_FORMAT = "arqos-pe-policy"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    dims: tuple[int, ...]
    elem: list[np.ndarray]
    agg: list[np.ndarray]
    bias: list[np.ndarray]
    gamma_ref: float
    level_scale: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.dims[0] != 1 or self.dims[-1] != 1:
            raise ValueError(f"dims must start and end with 1, got {self.dims}")
        n = len(self.dims) - 1
        if not (len(self.elem) == len(self.agg) == len(self.bias) == n):
            raise ValueError("one (elem, agg, bias) triple per layer required")
        for l, (a, b) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            if self.elem[l].shape != (a, b) or self.agg[l].shape != (a, b) or self.bias[l].shape != (b,):
                raise ValueError(f"layer {l} weights do not match dims {a}->{b}")

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def activations(self) -> tuple[str, ...]:
        return ("tanh",) * (self.n_layers - 1) + ("relu",)

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        gamma_ref: float,
        level_scale: float,
        dims=DEFAULT_DIMS,
    ) -> "PolicyParams":
        """Glorot-uniform weights, zero biases, output bias one (initial level = ``level_scale``)."""
        elem, agg, bias = [], [], []
        for a, b in zip(dims[:-1], dims[1:]):
            lim = np.sqrt(6.0 / (a + b))
            elem.append(rng.uniform(-lim, lim, (a, b)))
            agg.append(rng.uniform(-lim, lim, (a, b)))
            bias.append(np.zeros(b))
        bias[-1][:] = 1.0
        return cls(tuple(dims), elem, agg, bias, float(gamma_ref), float(level_scale))

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: elem, agg, bias for each layer."""
        out = []
        for l in range(self.n_layers):
            out += [self.elem[l], self.agg[l], self.bias[l]]
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.dims,
            [a.copy() for a in self.elem],
            [a.copy() for a in self.agg],
            [a.copy() for a in self.bias],
            self.gamma_ref,
            self.level_scale,
            dict(self.meta),
        )

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(
            self.dims,
            [a.astype(dtype) for a in self.elem],
            [a.astype(dtype) for a in self.agg],
            [a.astype(dtype) for a in self.bias],
            self.gamma_ref,
            self.level_scale,
            dict(self.meta),
        )

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "activations": list(self.activations),
            "gamma_ref": self.gamma_ref,
            "level_scale": self.level_scale,
            "layers": [
                {"elem": e.tolist(), "agg": a.tolist(), "bias": b.tolist()}
                for e, a, b in zip(self.elem, self.agg, self.bias)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        layers = d["layers"]
        return cls(
            tuple(d["dims"]),
            [np.array(x["elem"], dtype=float) for x in layers],
            [np.array(x["agg"], dtype=float) for x in layers],
            [np.array(x["bias"], dtype=float) for x in layers],
            float(d["gamma_ref"]),
            float(d["level_scale"]),
        )


def _as_batch(gamma):
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("gamma entries must be positive")
    return (gamma[None, :], True) if gamma.ndim == 1 else (gamma, False)


def _layer(h: np.ndarray, params: PolicyParams, l: int) -> np.ndarray:
    b, n, d = h.shape
    z = (h.reshape(b * n, d) @ params.elem[l]).reshape(b, n, -1)
    z += (h.mean(axis=1) @ params.agg[l] + params.bias[l])[:, None, :]
    return z


def _forward(params: PolicyParams, gamma: np.ndarray, keep: bool):
    h = np.log(gamma / params.gamma_ref)[..., None].astype(params.elem[0].dtype, copy=False)
    hs = [h]
    last = params.n_layers - 1
    for l in range(params.n_layers):
        z = _layer(h, params, l)
        h = np.tanh(z, out=z) if l < last else z
        if keep and l < last:
            hs.append(h)
    pooled = h[..., 0].mean(axis=-1, dtype=float)
    return pooled, hs


def water_level(params: PolicyParams, gamma, chunk: int = 4096):
    """Water level (W) for each slot in ``gamma`` (``(n_rb,)`` or ``(n_slots, n_rb)``)."""
    g, single = _as_batch(gamma)
    out = np.empty(g.shape[0])
    for s in range(0, g.shape[0], chunk):
        pooled, _ = _forward(params, g[s:s + chunk], keep=False)
        out[s:s + chunk] = params.level_scale * np.maximum(pooled, 0.0)
    return out[0] if single else out


def pe_forward(params: PolicyParams, gamma):
    """``(water_level, power)`` for one slot or a batch of slots."""
    w = water_level(params, gamma)
    return w, waterfill_at_level(gamma, w)


def forward_cached(params: PolicyParams, gamma):
    """Water levels plus the activations :func:`level_vjp` needs."""
    g, _ = _as_batch(gamma)
    pooled, hs = _forward(params, g, keep=True)
    return params.level_scale * np.maximum(pooled, 0.0), (pooled, hs)


def _backward(params, pooled, hs, upstream, grads):
    last = params.n_layers - 1
    b, n_rb = hs[0].shape[:2]
    g_pool = upstream * params.level_scale * (pooled > 0)
    g_z = np.broadcast_to((g_pool / n_rb)[:, None, None], (b, n_rb, 1)).astype(hs[0].dtype)
    for l in range(last, -1, -1):
        h_in = hs[l]
        d_in = h_in.shape[-1]
        g_sum = g_z.sum(axis=1)
        grads[3 * l] += h_in.reshape(-1, d_in).T @ g_z.reshape(b * n_rb, -1)
        grads[3 * l + 1] += h_in.mean(axis=1).T @ g_sum
        grads[3 * l + 2] += g_sum.sum(axis=0)
        if l == 0:
            break
        g_h = (g_z.reshape(b * n_rb, -1) @ params.elem[l].T).reshape(b, n_rb, -1)
        g_h += (g_sum @ params.agg[l].T)[:, None, :] / n_rb
        g_z = g_h * (1.0 - h_in * h_in)


def level_vjp(params: PolicyParams, gamma, upstream, chunk: int = 1024, cache=None) -> list[np.ndarray]:
    """Gradient of ``sum_t upstream[t] * w_t`` w.r.t. :meth:`PolicyParams.arrays`.

    Without ``cache`` (from :func:`forward_cached`) the forward pass is
    recomputed chunk by chunk so memory stays bounded.
    """
    upstream = np.atleast_1d(np.asarray(upstream, dtype=float))
    grads = [np.zeros_like(a) for a in params.arrays()]
    if cache is not None:
        _backward(params, cache[0], cache[1], upstream, grads)
        return grads
    g, _ = _as_batch(gamma)
    for s in range(0, g.shape[0], chunk):
        pooled, hs = _forward(params, g[s:s + chunk], keep=True)
        _backward(params, pooled, hs, upstream[s:s + chunk], grads)
    return grads


def save_checkpoint(path, params: PolicyParams, lam: float, iteration: int, seed: int, extra: dict | None = None) -> None:
    """JSON checkpoint; floats are written with round-trip precision."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "lambda": float(lam),
        "iteration": int(iteration),
        "seed": int(seed),
        "policy": params.to_dict(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(params, lam, doc)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return PolicyParams.from_dict(doc["policy"]), float(doc["lambda"]), doc
