"""Sparse feedforward ReLU networks of the class F(L, s, B, p).

A network with ``L`` hidden layers computes

    f(x) = W_L relu(. - V_L) ... W_1 relu(. - V_1) W_0 x

followed by clamping the scalar output to ``[-B, B]``. Every weight matrix and
every shift vector may carry at most ``s`` nonzero entries, each bounded by ``B``
in magnitude.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import InvalidInputError


@dataclass(frozen=True)
class NetworkArch:
    L: int
    widths: tuple[int, ...]
    s: int
    B: float

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.L < 1:
            raise InvalidInputError(f"depth L must be >= 1, got {self.L}")
        if len(self.widths) != self.L + 2:
            raise InvalidInputError(
                f"widths must have length L+2={self.L + 2}, got {len(self.widths)}"
            )
        if min(self.widths) < 1 or self.widths[-1] != 1:
            raise InvalidInputError(f"invalid widths {self.widths}")
        if self.s < 1:
            raise InvalidInputError(f"sparsity s must be >= 1, got {self.s}")
        if not self.B > 0:
            raise InvalidInputError(f"bound B must be > 0, got {self.B}")

    @classmethod
    def uniform(cls, d, L, width, s, B):
        return cls(L=L, widths=(d,) + (width,) * L + (1,), s=s, B=B)

    @property
    def d(self):
        return self.widths[0]

    @property
    def p_max(self):
        return max(self.widths)

    def to_dict(self):
        return {"L": self.L, "widths": list(self.widths), "s": self.s, "B": self.B}

    @classmethod
    def from_dict(cls, obj):
        return cls(L=int(obj["L"]), widths=tuple(obj["widths"]), s=int(obj["s"]), B=float(obj["B"]))


@dataclass(frozen=True, eq=False)
class SparseNetwork:
    """Weights ``W_0..W_L`` (shape ``p_{l+1} x p_l``) and shifts ``V_1..V_L``.

    Treated as an immutable value; training code works on copies.
    """

    arch: NetworkArch
    weights: tuple[np.ndarray, ...]
    shifts: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        vs = tuple(np.ascontiguousarray(v, dtype=np.float64).reshape(-1) for v in self.shifts)
        p = self.arch.widths
        if len(ws) != self.arch.L + 1 or len(vs) != self.arch.L:
            raise InvalidInputError("layer count does not match architecture")
        for l, w in enumerate(ws):
            if w.shape != (p[l + 1], p[l]):
                raise InvalidInputError(f"W_{l} has shape {w.shape}, expected {(p[l + 1], p[l])}")
        for l, v in enumerate(vs, start=1):
            if v.shape != (p[l],):
                raise InvalidInputError(f"V_{l} has shape {v.shape}, expected {(p[l],)}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "shifts", vs)

    @classmethod
    def zeros(cls, arch):
        p = arch.widths
        return cls(
            arch,
            tuple(np.zeros((p[l + 1], p[l])) for l in range(arch.L + 1)),
            tuple(np.zeros(p[l]) for l in range(1, arch.L + 1)),
        )

    def copy(self):
        return SparseNetwork(
            self.arch,
            tuple(w.copy() for w in self.weights),
            tuple(v.copy() for v in self.shifts),
        )

    def __call__(self, X):
        """Batch evaluation: rows of ``X`` are inputs."""
        X = _check_inputs(self, X)
        return kernels.forward_batch(self.weights, self.shifts, X, self.arch.B)

    def predict(self, X):
        return np.where(self(X) >= 0.0, 1, -1)

    def parameters(self):
        return list(self.weights) + list(self.shifts)

    def to_dict(self):
        return {
            "arch": self.arch.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "shifts": [v.tolist() for v in self.shifts],
        }

    @classmethod
    def from_dict(cls, obj):
        arch = NetworkArch.from_dict(obj["arch"])
        p = arch.widths
        weights = [np.array(w, dtype=np.float64).reshape(p[l + 1], p[l]) for l, w in enumerate(obj["weights"])]
        shifts = [np.array(v, dtype=np.float64).reshape(-1) for v in obj["shifts"]]
        return cls(arch, tuple(weights), tuple(shifts))

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class Gradient(NamedTuple):
    risk: float
    weights: list
    shifts: list


@dataclass(frozen=True)
class MembershipReport:
    in_class: bool
    max_nonzeros: int
    max_abs_entry: float
    per_layer_nonzeros: list = field(default_factory=list)


def _check_inputs(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.arch.d:
        raise InvalidInputError(f"expected inputs of dimension {net.arch.d}, got shape {X.shape}")
    return np.ascontiguousarray(X)


def _check_data(net, X, y):
    X = _check_inputs(net, X)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise InvalidInputError("empty data")
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError("X and y lengths differ")
    return X, y


def forward(net: SparseNetwork, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.arch.d:
        raise InvalidInputError(f"expected a vector of length {net.arch.d}, got shape {x.shape}")
    return float(net(x[None, :])[0])


def hinge(margin):
    """``(1 - margin)_+``, elementwise for arrays."""
    if np.ndim(margin) == 0:
        return max(1.0 - float(margin), 0.0)
    return np.maximum(1.0 - np.asarray(margin, dtype=np.float64), 0.0)


def empirical_hinge_risk(net: SparseNetwork, X, y) -> float:
    X, y = _check_data(net, X, y)
    return float(np.mean(hinge(y * net(X))))


def grad_empirical_hinge(net: SparseNetwork, X, y, masks=None) -> Gradient:
    """Exact subgradient of the empirical hinge risk.

    ``masks`` optionally holds one ``(n, p_l)`` multiplier array per hidden layer
    (dropout); it scales post-activations and their gradients.
    """
    X, y = _check_data(net, X, y)
    risk, gw, gv = kernels.hinge_risk_grad(net.weights, net.shifts, X, y, net.arch.B, masks)
    return Gradient(risk, gw, gv)


def project_to_class(net: SparseNetwork) -> SparseNetwork:
    """Clip every entry to ``[-B, B]``, then keep the ``s`` largest magnitudes per
    matrix and per shift vector (ties to lowest flat index). Idempotent."""
    out = net.copy()
    for arr in out.parameters():
        kernels.clip_prune(arr, out.arch.s, out.arch.B)
    return out


def class_membership(net: SparseNetwork) -> MembershipReport:
    counts = [int(np.count_nonzero(a)) for a in net.parameters()]
    max_abs = max(float(np.max(np.abs(a))) if a.size else 0.0 for a in net.parameters())
    max_nnz = max(counts)
    in_class = max_nnz <= net.arch.s and max_abs <= net.arch.B
    return MembershipReport(in_class, max_nnz, max_abs, counts)


def glorot_init(arch: NetworkArch, rng: np.random.Generator, gain: float = 1.0) -> SparseNetwork:
    """Scaled-uniform weights ``U(-r, r)``, ``r = gain * sqrt(6 / (fan_in + fan_out))``,
    clipped to ``[-B, B]``; zero shifts."""
    if not gain > 0:
        raise InvalidInputError("gain must be > 0")
    p = arch.widths
    weights = []
    for l in range(arch.L + 1):
        r = gain * math.sqrt(6.0 / (p[l] + p[l + 1]))
        weights.append(np.clip(rng.uniform(-r, r, size=(p[l + 1], p[l])), -arch.B, arch.B))
    shifts = [np.zeros(p[l]) for l in range(1, arch.L + 1)]
    return SparseNetwork(arch, tuple(weights), tuple(shifts))


def network_from_layers(weights: Sequence, shifts: Sequence, s=None, B=None) -> SparseNetwork:
    """Build a network from explicit layers, inferring the architecture.

    ``s`` defaults to the largest per-layer nonzero count and ``B`` to the largest
    entry magnitude (at least 1).
    """
    weights = [np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in weights]
    shifts = [np.asarray(v, dtype=np.float64).reshape(-1) for v in shifts]
    widths = (weights[0].shape[1],) + tuple(w.shape[0] for w in weights)
    params = weights + shifts
    if s is None:
        s = max(1, max(int(np.count_nonzero(a)) for a in params))
    if B is None:
        B = max(1.0, max(float(np.max(np.abs(a))) for a in params))
    arch = NetworkArch(L=len(shifts), widths=widths, s=s, B=B)
    return SparseNetwork(arch, tuple(weights), tuple(shifts))
