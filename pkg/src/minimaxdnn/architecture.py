"""Closed-form rate exponents, architecture sizing and approximation budgets.

All logarithms are natural logs; unspecified proportionality constants are 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError
from .network import NetworkArch, SparseNetwork


@dataclass(frozen=True)
class SmoothnessSpec:
    """Modular class parameters.

    ``dims`` is ``(d_1, ..., d_q)``; ``t``, ``beta`` and ``K`` have length ``q + 1``.
    ``a``/``b`` hold the ``q + 2`` interval endpoints bounding the input of
    stage 0 through the output of stage ``q`` (defaults: all ``[0, 1]``).
    """

    q: int
    dims: tuple[int, ...]
    t: tuple[int, ...]
    beta: tuple[float, ...]
    K: tuple[float, ...] = None
    a: tuple[float, ...] = None
    b: tuple[float, ...] = None
    ambient_dim: int | None = None

    def __post_init__(self):
        q = self.q
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("dims", tuple(int(x) for x in self.dims))
        set_("t", tuple(int(x) for x in self.t))
        set_("beta", tuple(float(x) for x in self.beta))
        set_("K", tuple(float(x) for x in (self.K if self.K is not None else [1.0] * (q + 1))))
        set_("a", tuple(float(x) for x in (self.a if self.a is not None else [0.0] * (q + 2))))
        set_("b", tuple(float(x) for x in (self.b if self.b is not None else [1.0] * (q + 2))))
        if q < 0:
            raise InvalidInputError("q must be >= 0")
        if len(self.dims) != q or len(self.t) != q + 1 or len(self.beta) != q + 1 or len(self.K) != q + 1:
            raise InvalidInputError("dims must have length q and t, beta, K length q+1")
        if len(self.a) != q + 2 or len(self.b) != q + 2:
            raise InvalidInputError("a and b must have length q+2")
        if any(lo >= hi for lo, hi in zip(self.a, self.b)):
            raise InvalidInputError("need a_u < b_u")
        if min(self.beta) <= 0 or min(self.K) <= 0 or min(self.t) < 1:
            raise InvalidInputError("beta, K must be positive and t >= 1")
        for u in range(1, q + 1):
            if self.t[u] > self.dims[u - 1]:
                raise InvalidInputError(f"t_{u} = {self.t[u]} exceeds d_{u} = {self.dims[u - 1]}")
        if self.ambient_dim is not None and self.t[0] > self.ambient_dim:
            raise InvalidInputError("t_0 exceeds the ambient dimension")

    def out_dim(self, u):
        """``d_{u+1}``, the number of components of stage ``u`` (``d_{q+1} = 1``)."""
        return self.dims[u] if u < self.q else 1

    def to_dict(self):
        return {
            "q": self.q, "dims": list(self.dims), "t": list(self.t), "beta": list(self.beta),
            "K": list(self.K), "a": list(self.a), "b": list(self.b), "ambient_dim": self.ambient_dim,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class NoiseProfile:
    alpha: float
    C_d: float

    def __post_init__(self):
        if self.alpha < 0 or not self.C_d > 0:
            raise InvalidInputError(f"need alpha >= 0 and C_d > 0, got {self.alpha}, {self.C_d}")


@dataclass(frozen=True)
class RateExponents:
    s0: float
    s1: float
    u_star: int
    beta_star: tuple[float, ...] = ()


def downstream_exponents(beta: Sequence[float]) -> list[float]:
    """``prod_{l=u+1}^q min(beta_l, 1)`` for each ``u`` (1 for the last stage)."""
    q = len(beta) - 1
    out = [1.0] * (q + 1)
    for u in range(q - 1, -1, -1):
        out[u] = out[u + 1] * min(beta[u + 1], 1.0)
    return out


def effective_smoothness(spec: SmoothnessSpec) -> list[float]:
    return [b * p for b, p in zip(spec.beta, downstream_exponents(spec.beta))]


def rate_exponents(spec: SmoothnessSpec, alpha: float) -> RateExponents:
    if alpha < 0:
        raise InvalidInputError("alpha must be >= 0")
    bstar = effective_smoothness(spec)
    s0_terms = [b * (alpha + 1) / (b * (alpha + 2) + t) for b, t in zip(bstar, spec.t)]
    s1_terms = [t / (b * (alpha + 2) + t) for b, t in zip(bstar, spec.t)]
    u_star = int(np.argmin(s0_terms))
    return RateExponents(s0=min(s0_terms), s1=max(s1_terms), u_star=u_star, beta_star=tuple(bstar))


def sizing_ratio(n, d):
    """``n / (ln^2 n (ln n + ln d))``."""
    ln = math.log(n)
    return n / (ln * ln * (ln + math.log(d)))


def size_architecture(n: int, d: int, exps: RateExponents, noise: NoiseProfile):
    """Network class sized by the upper-bound conditions with unit constants.

    Returns ``(arch, feasible)`` where ``feasible`` is the sample-size hypothesis
    ``C_d^{1/s0} ln d <= n / ln^2 n``.
    """
    if n < 2 or d < 1:
        raise InvalidInputError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    lam = sizing_ratio(n, d)
    ln = math.log(n)
    grow = lam ** exps.s1
    L = math.ceil(ln)
    width = max(d, math.ceil(grow))
    s = math.ceil(grow * ln)
    B = lam ** (exps.s0 / (noise.alpha + 1.0))
    feasible = noise.C_d ** (1.0 / exps.s0) * math.log(d) <= n / ln ** 2
    return NetworkArch.uniform(d, L, width, s, B), feasible


def lower_bound_rate(n, d, C_d, s0, D1=1.0, log_d=None):
    """``min(D1 C_d (ln d / n)^s0, 1)``; ``log_d`` overrides ``ln d``."""
    if log_d is None:
        if d < 2:
            raise InvalidInputError("need d >= 2")
        log_d = math.log(d)
    if n < 2:
        raise InvalidInputError("need n >= 2")
    return min(D1 * C_d * (log_d / n) ** s0, 1.0)


def upper_bound_rate(n, d, C_d, s0, D2=1.0, log_d=None):
    """``D2 C_d ((ln^3 n + ln^2 n ln d) / n)^s0``; ``log_d`` overrides ``ln d``."""
    if n < 2:
        raise InvalidInputError("need n >= 2")
    if log_d is None:
        log_d = math.log(d)
    ln = math.log(n)
    return D2 * C_d * ((ln ** 3 + ln ** 2 * log_d) / n) ** s0


def rate_with_log_dimension(n, s0, eps, C_d=1.0, D=1.0, upper=False):
    """Rate when ``ln d ~ n^eps``: ``D C_d n^{-(1-eps) s0}``, times ``ln^{2 s0} n`` if ``upper``."""
    r = D * C_d * n ** (-(1.0 - eps) * s0)
    return r * math.log(n) ** (2 * s0) if upper else r


def covering_bound(L, p_max, d, s, B, upsilon):
    """Log covering number bound of the sparse class at sup-norm radius ``upsilon``."""
    if not upsilon > 0:
        raise InvalidInputError("upsilon must be > 0")
    return 2 * L * (s + 1) * math.log((L + 1) * (max(p_max, d) + 1) * max(B, 1.0) / upsilon)


def class_entropy_bound(eps, upsilon, d, t_over_beta_max, C2=1.0):
    """Entropy scaling of the approximating class when its error is ``eps``:
    ``C2 log^2(1/eps) eps^{-max t/beta*} (log(1/upsilon) + log d + log(1/eps))``."""
    le = math.log(1.0 / eps)
    return C2 * le ** 2 * eps ** (-t_over_beta_max) * (math.log(1.0 / upsilon) + math.log(d) + le)


def _check_approx_preconditions(beta, r, K, N, m):
    need = max((beta + 1) ** r, (K + 1) * math.e ** r)
    if N < need or m < 1:
        warnings.warn(
            f"approximation preconditions violated: N={N} (need >= {need:.4g}), m={m} (need >= 1)",
            stacklevel=3,
        )


def approx_error_bound(beta, r, K, N, m):
    _check_approx_preconditions(beta, r, K, N, m)
    return (2 * K + 1) * (1 + r * r + beta * beta) * 6 ** r * N * 2.0 ** (-m) + K * 3 ** beta * N ** (-beta / r)


def approx_network_size(beta, r, N, m):
    L = 8 + (m + 5) * (1 + math.ceil(math.log2(max(r, beta))))
    width = 6 * (r + math.ceil(beta)) * N
    s = math.floor(141 * (r + beta + 1) ** (3 + r) * N * (m + 6))
    return {"L": L, "width": width, "s": s}


def composition_constant(spec: SmoothnessSpec):
    """``K_q prod_{l=0}^{q-1} (2 K_l)^{beta_{l+1}}``."""
    c = spec.K[spec.q]
    for l in range(spec.q):
        c *= (2 * spec.K[l]) ** spec.beta[l + 1]
    return c


def composition_error_bound(spec: SmoothnessSpec, stage_errors: Sequence[float]) -> float:
    if len(stage_errors) != spec.q + 1:
        raise InvalidInputError(f"need {spec.q + 1} stage errors")
    if min(stage_errors) < 0:
        raise InvalidInputError("stage errors must be nonnegative")
    pw = downstream_exponents(spec.beta)
    return composition_constant(spec) * sum(e ** p for e, p in zip(stage_errors, pw))


@dataclass(frozen=True)
class ApproxBudget:
    eps: float
    L: int
    widths: tuple[int, ...]
    s: int
    B: float
    A: tuple[float, ...] = field(default=())
    Bu: tuple[float, ...] = field(default=())
    C: tuple[float, ...] = field(default=())


def regression_approx_budget(spec: SmoothnessSpec, N, m, noise: NoiseProfile | None = None,
                             Q=None, d=None) -> ApproxBudget:
    """Approximation error and network budget for a modular regression function.

    ``Q`` are the per-stage absolute constants (default 1). ``d`` is the input
    width (default ``spec.ambient_dim``, else ``t_0``).
    """
    q = spec.q
    Q = [1.0] * (q + 1) if Q is None else list(Q)
    kc = composition_constant(spec)
    bss = downstream_exponents(spec.beta)
    bstar = effective_smoothness(spec)
    A = [kc * (2 * Q[u] + 1) for u in range(q + 1)]
    Bu = [kc * (Q[u] * 3 ** spec.beta[u]) ** bss[u] for u in range(q + 1)]
    C = [2 * spec.t[u] ** 2 * 6 ** (spec.t[u] * bss[u]) for u in range(q + 1)]
    eps = sum(A[u] * C[u] * (N * 2.0 ** (-m)) ** bss[u] for u in range(q + 1))
    eps += sum(Bu[u] * N ** (-bstar[u] / spec.t[u]) for u in range(q + 1))
    L = 3 * q - 1 + sum(
        8 + (m + 5) * (1 + math.ceil(math.log2(max(spec.t[u], spec.beta[u])))) for u in range(q + 1)
    )
    r = max(spec.out_dim(u) * (spec.t[u] + math.ceil(spec.beta[u])) for u in range(q + 1))
    d_in = d if d is not None else (spec.ambient_dim if spec.ambient_dim is not None else spec.t[0])
    hidden = max(L - 2, 0)
    widths = (d_in,) + (12 * r * N,) * hidden + (3, 3, 1)
    s = 2 * sum(
        spec.out_dim(u) * (141 * (spec.t[u] + spec.beta[u] + 1) ** (3 + spec.t[u]) * N * (m + 6) + 4)
        for u in range(q + 1)
    ) + 7
    return ApproxBudget(eps=eps, L=L, widths=widths, s=math.ceil(s), B=1.0 / eps,
                        A=tuple(A), Bu=tuple(Bu), C=tuple(C))


@dataclass(frozen=True)
class DecisionHead:
    """Two ReLU layers mapping an approximation of eta to a hinge-optimal output.

    ``u = (eta - 1/2) / eps``; output ``2 (relu(u) - relu(u - 1)) - 1``: +1 when
    ``eta >= 1/2 + eps``, -1 when ``eta <= 1/2``, linear in between.
    """

    eps: float

    def hidden(self, eta):
        u = (np.asarray(eta, dtype=np.float64) - 0.5) / self.eps
        return np.maximum(u, 0.0), np.maximum(u - 1.0, 0.0)

    def __call__(self, eta):
        h1, h2 = self.hidden(eta)
        return 2.0 * (h1 - h2) - 1.0

    @property
    def max_weight(self):
        return max(1.0 / self.eps, 1.0 / (2 * self.eps) + 1.0, 2.0)

    def as_network(self) -> SparseNetwork:
        """Same map as a ``SparseNetwork`` on inputs ``eta >= 0``; the output offset
        -1 is carried by a constant unit ``relu(0 * eta + 1)``."""
        from .network import network_from_layers

        inv = 1.0 / self.eps
        W0 = [[inv], [inv], [0.0]]
        V1 = [inv / 2, inv / 2 + 1.0, -1.0]
        W1 = [[2.0, -2.0, -1.0]]
        return network_from_layers([W0, W1], [V1], s=3, B=self.max_weight)


def build_decision_head(eps: float) -> DecisionHead:
    if not eps > 0:
        raise InvalidInputError("eps must be > 0")
    return DecisionHead(float(eps))


def pwl_approximator(f: Callable, beta: float, K: float, N: int) -> SparseNetwork:
    """One-hidden-layer ReLU network interpolating ``f`` at knots ``k/N`` on [0, 1].

    For ``f`` in the Hoelder ball of order ``beta <= 1`` and radius ``K`` the sup
    error is at most ``K N^{-beta}``.
    """
    if not 0 < beta <= 1:
        raise InvalidInputError("beta must lie in (0, 1]")
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    knots = np.arange(N + 1) / N
    vals = np.asarray(f(knots), dtype=np.float64).reshape(-1)
    slopes = np.diff(vals) * N
    # units: relu(x + 1) carries the constant, relu(x - k/N) for k < N carry slope changes
    coef = np.empty(N + 1)
    coef[0] = vals[0]
    coef[1] = slopes[0] - vals[0]
    coef[2:] = np.diff(slopes)
    W0 = np.ones((N + 1, 1))
    V1 = np.concatenate([[-1.0], knots[:-1]])
    W1 = coef[None, :]
    B = max(1.0, float(np.max(np.abs(coef))), float(np.max(np.abs(vals))))
    from .network import network_from_layers

    return network_from_layers([W0, W1], [V1], s=N + 1, B=B)
