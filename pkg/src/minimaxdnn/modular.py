"""Instances whose conditional probability has a modular (compositional) form.

``eta(x) = g_q o ... o g_0(x)`` where each component of ``g_u`` reads only
``t_u`` coordinates of the previous stage. Features are uniform on ``[0, 1]^d``
and labels are ``+1`` with probability ``eta(x)``, else ``-1``.

Indices into feature vectors are 0-based throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .architecture import NoiseProfile, SmoothnessSpec
from .errors import InstanceValidationError, InvalidInputError

RANGE_TOL = 1e-12


@dataclass(frozen=True)
class Component:
    """One ``g_{uv}``: reads columns ``active`` of the previous stage output."""

    active: tuple[int, ...]
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""


@dataclass(frozen=True, eq=False)
class ModularInstance:
    spec: SmoothnessSpec
    stages: tuple[tuple[Component, ...], ...]
    d: int
    noise: NoiseProfile = NoiseProfile(0.0, 1.0)
    priors: tuple[float, float] = (0.5, 0.5)
    c: float = 0.5
    name: str = "custom"
    description: dict | None = None
    closed_form_bayes_risk: float | None = None
    margin_law: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.stages) != self.spec.q + 1:
            raise InvalidInputError("need q+1 stages")
        for u, stage in enumerate(self.stages):
            if len(stage) != self.spec.out_dim(u):
                raise InvalidInputError(f"stage {u} needs {self.spec.out_dim(u)} components")
            width_in = self.d if u == 0 else self.spec.dims[u - 1]
            for comp in stage:
                if len(comp.active) != self.spec.t[u]:
                    raise InvalidInputError(f"stage {u} components must read t_{u}={self.spec.t[u]} inputs")
                if min(comp.active) < 0 or max(comp.active) >= width_in:
                    raise InvalidInputError(f"stage {u} active index out of range")
        pp, pq = self.priors
        if abs(pp + pq - 1.0) > 1e-12:
            raise InvalidInputError("priors must sum to 1")
        if not 0 < self.c <= 0.5 or not (self.c <= pp <= 1 - self.c and self.c <= pq <= 1 - self.c):
            raise InvalidInputError(f"priors {self.priors} outside [c, 1-c] with c={self.c}")

    @property
    def active_coordinates(self):
        return sorted({i for comp in self.stages[0] for i in comp.active})

    def stage_outputs(self, X):
        """All intermediate stage outputs for rows of ``X``; checks declared ranges."""
        Z = np.asarray(X, dtype=np.float64)
        outs = []
        for u, stage in enumerate(self.stages):
            Z = np.column_stack([np.asarray(c.fn(Z[:, list(c.active)]), dtype=np.float64).reshape(-1)
                                 for c in stage])
            lo, hi = self.spec.a[u + 1], self.spec.b[u + 1]
            if Z.size and (Z.min() < lo - RANGE_TOL or Z.max() > hi + RANGE_TOL):
                raise InstanceValidationError(
                    f"stage {u} output [{Z.min():.6g}, {Z.max():.6g}] leaves [{lo}, {hi}]"
                )
            outs.append(Z)
        return outs

    def eta(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise InvalidInputError(f"expected dimension {self.d}, got {X.shape[1]}")
        out = self.stage_outputs(X)[-1][:, 0]
        if out.size and (out.min() < -RANGE_TOL or out.max() > 1 + RANGE_TOL):
            raise InstanceValidationError("eta left [0, 1]")
        return np.clip(out, 0.0, 1.0)

    def sample_x(self, n, rng):
        return rng.uniform(size=(n, self.d))

    def validate(self, n_points=100_000, seed=0):
        """Dense random sweep of every stage range; raises on violation."""
        rng = np.random.default_rng(seed)
        self.eta(self.sample_x(n_points, rng))
        return self


def eval_eta(inst, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("x must be a vector")
    if x.min() < 0 or x.max() > 1:
        raise InvalidInputError("x must lie in [0, 1]^d")
    return float(inst.eta(x[None, :])[0])


def bayes_classify(eta_value):
    """+1 iff ``eta >= 1/2``; elementwise for arrays."""
    if np.ndim(eta_value) == 0:
        return 1 if eta_value >= 0.5 else -1
    return np.where(np.asarray(eta_value) >= 0.5, 1, -1)


def bayes_classifier(inst):
    return lambda X: bayes_classify(inst.eta(X))


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def __iter__(self):
        for x, y in zip(self.X, self.y):
            yield LabeledSample(x, int(y))

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for x, y in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[-1] != "y":
            raise InvalidInputError("CSV must have columns x1..xd, y")
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
        y = data[:, -1]
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidInputError("labels must be -1 or +1")
        return cls(np.ascontiguousarray(data[:, :-1]), y.astype(np.int64))


def sample_dataset(inst, n, seed) -> Dataset:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = inst.sample_x(n, rng)
    u = rng.uniform(size=n)
    y = np.where(u < inst.eta(X), 1, -1)
    return Dataset(X, y)


# --- built-in families ------------------------------------------------------

# name -> (vectorized fn on [0, 1], output range, declared Hoelder exponent, radius)
UNIVARIATE = {
    "identity": (lambda z: z, (0.0, 1.0), 2.0, 2.0),
    "square": (lambda z: z * z, (0.0, 1.0), 2.0, 5.0),
    "sqrt": (np.sqrt, (0.0, 1.0), 0.5, 2.0),
    "sin": (lambda z: 0.5 + 0.5 * np.sin(2 * np.pi * z), (0.0, 1.0), 2.0, 1.0 + np.pi + 2 * np.pi ** 2),
}


def _univariate(f):
    if isinstance(f, str):
        if f not in UNIVARIATE:
            raise InvalidInputError(f"unknown univariate function {f!r}; known: {sorted(UNIVARIATE)}")
        return UNIVARIATE[f]
    return (f, (0.0, 1.0), 1.0, 1.0)


def _sum(z):
    return z.sum(axis=1)


def _default_squash(lo, hi):
    scale = 1.0 / (2.0 * (hi - lo))
    return 0.25 - lo * scale, scale


def _additive_instance(d, comps, first_range, t0, beta0, K0, squash, beta, noise, name, description,
                       closed_form=None, margin_law=None):
    d1 = len(comps)
    lo, hi = d1 * first_range[0], d1 * first_range[1]
    offset, scale = squash if squash is not None else _default_squash(lo, hi)
    ends = sorted((offset + scale * lo, offset + scale * hi))
    if ends[0] < -RANGE_TOL or ends[1] > 1 + RANGE_TOL:
        raise InstanceValidationError(f"squash maps [{lo}, {hi}] to {ends}, outside [0, 1]")
    sq = Component((0,), lambda z: offset + scale * z[:, 0], "squash")
    g1 = Component(tuple(range(d1)), _sum, "sum")
    if beta is None:
        beta = (beta0, 2.0, 2.0)
    K = (K0, 2.0 * d1, max(abs(offset), abs(offset + scale * hi), abs(offset + scale * lo)) + abs(scale))
    spec = SmoothnessSpec(
        q=2, dims=(d1, 1), t=(t0, d1, 1), beta=beta, K=K,
        a=(0.0, first_range[0], lo, 0.0), b=(1.0, first_range[1], hi, 1.0), ambient_dim=d,
    )
    inst = ModularInstance(
        spec=spec, stages=(tuple(comps), (g1,), (sq,)), d=d,
        noise=noise if noise is not None else NoiseProfile(0.0, 1.0),
        name=name, description=description, closed_form_bayes_risk=closed_form, margin_law=margin_law,
    )
    return inst.validate()


def builtin_gam(d, J: Sequence[int], fs="identity", squash=None, beta=None, noise=None):
    """Additive model ``eta = offset + scale * sum_{j in J} f_j(x_j)``.

    ``fs`` is one function (or registered name) for all ``j`` or one per index.
    Without ``squash`` the sum's range is mapped affinely onto ``[1/4, 3/4]``.
    """
    J = [int(j) for j in J]
    if not J or len(J) > d or len(set(J)) != len(J) or min(J) < 0 or max(J) >= d:
        raise InvalidInputError(f"invalid index set {J} for d={d}")
    fs_list = [fs] * len(J) if isinstance(fs, str) or callable(fs) else list(fs)
    if len(fs_list) != len(J):
        raise InvalidInputError("need one function per index")
    specs = [_univariate(f) for f in fs_list]
    rng_lo = min(s[1][0] for s in specs)
    rng_hi = max(s[1][1] for s in specs)
    comps = [Component((j,), (lambda fn: lambda z: fn(z[:, 0]))(s[0]), f"f_{j}") for j, s in zip(J, specs)]
    beta0 = min(s[2] for s in specs)
    K0 = max(s[3] for s in specs)
    desc = {"family": "gam", "d": d, "J": J,
            "f": fs_list if all(isinstance(f, str) for f in fs_list) else None,
            "squash": list(squash) if squash is not None else None}
    return _additive_instance(d, comps, (rng_lo, rng_hi), 1, beta0, K0, squash, beta, noise, "gam", desc)


def gam_linear(d=16, beta=None):
    """``eta = 1/2 + (x_1 + x_2 - 1)/4``; Bayes rule ``sign(x_1 + x_2 - 1)``.

    ``P(|eta - 1/2| <= t) = 8t - 16t^2`` for ``t <= 1/4``, so the noise condition
    holds with ``alpha = 1`` and ``C_d = 8``.
    """
    inst = builtin_gam(d, [0, 1], "identity", squash=(0.25, 0.25), beta=beta, noise=NoiseProfile(1.0, 8.0))
    law = lambda t: 1.0 if t >= 0.25 else 8 * t - 16 * t * t
    desc = {"family": "gam-linear", "d": d}
    if beta is not None:
        desc["beta"] = [float(b) for b in beta]
    return _with(inst, name="gam-linear", description=desc,
                 closed_form_bayes_risk=5.0 / 12.0, margin_law=law)


def builtin_tensor_anova(d, r, tuples, fs="identity", squash=None, beta=None, noise=None):
    """``eta = offset + scale * sum_{(j_1..j_r) in J} prod_k f(x_{j_k})``."""
    tuples = [tuple(int(j) for j in tup) for tup in tuples]
    if not tuples:
        raise InvalidInputError("empty tuple set")
    for tup in tuples:
        if len(tup) != r or any(b <= a for a, b in zip(tup, tup[1:])) or tup[0] < 0 or tup[-1] >= d:
            raise InvalidInputError(f"tuples must be strictly increasing {r}-tuples in [0, d): {tup}")
    fn, (lo, hi), beta0, K0 = _univariate(fs)
    if lo < 0:
        raise InvalidInputError("tensor ANOVA needs nonnegative univariate functions")
    comps = [Component(tup, lambda z, fn=fn: np.prod(fn(z), axis=1), f"f_{tup}") for tup in tuples]
    desc = {"family": "tensor-anova", "d": d, "r": r, "J": [list(t) for t in tuples],
            "f": fs if isinstance(fs, str) else None, "squash": list(squash) if squash is not None else None}
    return _additive_instance(d, comps, (lo ** r, hi ** r), r, beta0, K0 * r, squash, beta, noise,
                              "tensor-anova", desc)


def constant_instance(d, value):
    """``eta`` identically ``value``."""
    if not 0 <= value <= 1:
        raise InvalidInputError("value must lie in [0, 1]")
    spec = SmoothnessSpec(q=0, dims=(), t=(1,), beta=(1.0,), K=(max(value, 1e-12),),
                          a=(0.0, 0.0), b=(1.0, 1.0), ambient_dim=d)
    comp = Component((0,), lambda z: np.full(z.shape[0], float(value)), "const")
    gap = abs(value - 0.5)
    law = lambda t: 1.0 if t >= gap else 0.0
    noise = NoiseProfile(0.0, 1.0)
    return ModularInstance(spec=spec, stages=((comp,),), d=d, noise=noise, name="constant",
                           description={"family": "constant", "d": d, "value": value},
                           closed_form_bayes_risk=min(value, 1 - value), margin_law=law)


def _with(inst, **changes):
    from dataclasses import replace

    return replace(inst, **changes)


def load_instance(desc: dict):
    """Build an instance from a JSON description ``{"family": ..., ...}``."""
    fam = desc.get("family")
    d = int(desc.get("d", 16))
    if fam == "gam-linear":
        return gam_linear(d, beta=desc.get("beta"))
    if fam == "gam":
        inst = builtin_gam(d, desc["J"], desc.get("f") or "identity", desc.get("squash"), desc.get("beta"),
                           _noise(desc))
        return _with(inst, description=dict(desc))
    if fam == "tensor-anova":
        inst = builtin_tensor_anova(d, int(desc["r"]), desc["J"], desc.get("f") or "identity",
                                    desc.get("squash"), desc.get("beta"), _noise(desc))
        return _with(inst, description=dict(desc))
    if fam == "constant":
        return constant_instance(d, float(desc["value"]))
    if fam == "hard":
        from .hard_instance import HardInstance

        return HardInstance.from_description(desc)
    raise InvalidInputError(f"unknown instance family {fam!r}")


def _noise(desc):
    if "alpha" in desc or "C_d" in desc:
        return NoiseProfile(float(desc.get("alpha", 0.0)), float(desc.get("C_d", 1.0)))
    return None


# --- noise condition --------------------------------------------------------

@dataclass
class MarginEstimate:
    alpha_hat: float
    C_hat: float
    table: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    infinite_margin: bool = False

    @property
    def ok(self):
        return not self.violations


def margin_probabilities(inst, t_grid, n_mc, seed):
    """MC estimates of ``P(|eta(X) - 1/2| <= t)`` and their binomial std errors."""
    rng = np.random.default_rng(seed)
    gap = np.abs(inst.eta(inst.sample_x(n_mc, rng)) - 0.5)
    gap.sort()
    t = np.asarray(t_grid, dtype=np.float64)
    p = np.searchsorted(gap, t, side="right") / n_mc
    se = np.sqrt(p * (1 - p) / n_mc)
    return p, se


def estimate_margin_exponent(inst, t_grid, n_mc=1_000_000, seed=0) -> MarginEstimate:
    """Fit ``log P(|eta - 1/2| <= t) ~ log C + alpha log t`` by least squares and flag
    grid points where the estimate exceeds the declared ``C_d t^alpha`` by more than
    three standard errors."""
    t = np.asarray(t_grid, dtype=np.float64)
    if np.any(t <= 0) or np.any(t >= 0.5):
        raise InvalidInputError("t grid must lie in (0, 1/2)")
    p, se = margin_probabilities(inst, t, n_mc, seed)
    noise = inst.noise
    bound = noise.C_d * t ** noise.alpha
    table, viol = [], []
    for ti, pi, si, bi in zip(t, p, se, bound):
        bad = pi > bi + 3 * si
        table.append({"t": float(ti), "p_hat": float(pi), "std_error": float(si),
                      "declared_bound": float(bi), "violated": bool(bad)})
        if bad:
            viol.append(float(ti))
    pos = p > 0
    if pos.sum() == 0:
        return MarginEstimate(math.inf, 0.0, table, viol, infinite_margin=True)
    if pos.sum() == 1:
        return MarginEstimate(0.0, float(p[pos][0]), table, viol)
    fit = stats.linregress(np.log(t[pos]), np.log(p[pos]))
    if not np.isfinite(fit.slope):
        fit_slope, fit_int = 0.0, float(np.log(p[pos][0]))
    else:
        fit_slope, fit_int = float(fit.slope), float(fit.intercept)
    return MarginEstimate(fit_slope, math.exp(fit_int), table, viol)


@dataclass
class Prop1Report:
    holds: bool
    C1: float
    C2: float
    alpha: float
    C_d: float
    sup_value: float
    M_d: float


def prop1_constants(delta, tau, c):
    if not 0 < delta < 1 or not 0 <= tau < 1 or not 0 < c <= 0.5:
        raise InvalidInputError("need 0<delta<1, 0<=tau<1, 0<c<=1/2")
    C1 = 2 ** (2 - tau) / (1 - tau) * ((2 * (1 - c) + c * delta) / c) ** (1 - tau)
    C2 = ((4 - 2 * c) / (c * delta)) ** (1 - tau)
    return C1, C2


def check_prop1(delta, tau, c, M_d=None, ratio_density=None, ratio_samples=None, center=1.0,
                n_grid=4001) -> Prop1Report:
    """Constants of the density-ratio sufficient condition for the noise condition.

    The density of the likelihood ratio ``q(X)/p(X)`` comes from ``ratio_density``
    (callable) or a Gaussian KDE of ``ratio_samples``. Its weighted supremum
    ``sup_{|r - center| <= delta} f(r) |r - center|^tau`` is taken on a grid and
    compared with ``M_d`` (which defaults to that supremum).
    """
    C1, C2 = prop1_constants(delta, tau, c)
    sup_value = math.nan
    if ratio_density is None and ratio_samples is not None:
        ratio_density = stats.gaussian_kde(np.asarray(ratio_samples, dtype=np.float64))
    if ratio_density is not None:
        r = np.linspace(center - delta, center + delta, n_grid)
        vals = np.asarray(ratio_density(r), dtype=np.float64) * np.abs(r - center) ** tau
        sup_value = float(np.max(vals))
    if M_d is None:
        if math.isnan(sup_value):
            raise InvalidInputError("need M_d or a ratio density/samples")
        M_d = sup_value
    holds = bool(math.isnan(sup_value) or sup_value <= M_d)
    return Prop1Report(holds=holds, C1=C1, C2=C2, alpha=1 - tau, C_d=max(C1 * M_d, C2),
                       sup_value=sup_value, M_d=float(M_d))
