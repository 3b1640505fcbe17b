"""Hard instances: signed smooth bumps on a regular grid with calibrated cell masses.

The first ``t*`` features are split into ``nu^{t*}`` cubic cells with centers
``((2k_1+1)/(2nu), ...)``. The first ``m`` cells (lexicographic order) are active:
there ``eta = 1/2 + sigma_j h(x)^{beta_tilde} / 2`` with the bump
``h(x) = nu^{-beta*} C_gamma gamma(nu ||x - center||_2)``. All remaining cells
form the residual region, where ``eta = residual_eta``.

The feature marginal puts mass ``w`` on each active cell, spread uniformly on a
small cube around its center where ``gamma = 1``, and mass ``1 - m w`` uniformly
on the residual cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .architecture import NoiseProfile, SmoothnessSpec, downstream_exponents, rate_exponents
from .errors import CalibrationError, InvalidInputError

_LO, _HI = 0.25, 0.5


def gamma1(x):
    """``exp(1 / ((x - 1/4)(x - 1/2)))`` on ``(1/4, 1/2)``, zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    inside = (x > _LO) & (x < _HI)
    xi = x[inside]
    with np.errstate(under="ignore"):
        out[inside] = np.exp(1.0 / ((xi - _LO) * (xi - _HI)))
    return out if out.ndim else float(out)


class BumpFunction:
    """``gamma(x) = int_x^inf gamma1 / int_{1/4}^{1/2} gamma1``.

    Tail integrals are tabulated by composite Simpson with panel width ``step``;
    a query between nodes adds one Simpson panel from the query to the next node.
    """

    def __init__(self, step=1e-5):
        self.step = step
        M = int(round((_HI - _LO) / step))
        self.nodes = _LO + step * np.arange(M + 1)
        self.nodes[-1] = _HI
        f = gamma1(self.nodes)
        fm = gamma1(self.nodes[:-1] + step / 2)
        panels = step / 6 * (f[:-1] + 4 * fm + f[1:])
        tail = np.zeros(M + 1)
        tail[:-1] = np.cumsum(panels[::-1])[::-1]
        self.tail = tail
        self.normalizer = float(tail[0])

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x <= _LO, 1.0, 0.0)
        mid = (x > _LO) & (x < _HI)
        if np.any(mid):
            xm = x[mid]
            k = np.minimum(np.searchsorted(self.nodes, xm, side="right") - 1, len(self.nodes) - 2)
            right = self.nodes[k + 1]
            h = right - xm
            part = h / 6 * (gamma1(xm) + 4 * gamma1(xm + h / 2) + gamma1(right))
            out[mid] = (self.tail[k + 1] + part) / self.normalizer
        return out if out.ndim else float(out)


@lru_cache(maxsize=4)
def get_bump(step=1e-5):
    return BumpFunction(step)


def gamma(x):
    return get_bump()(x)


def grid_points(nu, t):
    """All ``nu^t`` centers, lexicographically ordered, as an array ``(nu^t, t)``."""
    if nu < 1 or t < 1:
        raise InvalidInputError("need nu >= 1 and t >= 1")
    c = (2 * np.arange(nu) + 1) / (2 * nu)
    mesh = np.meshgrid(*([c] * t), indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=1)


def cell_indices(X, nu):
    """Per-coordinate index of the nearest center (max-norm); ties go to the lower center."""
    X = np.asarray(X, dtype=np.float64)
    return np.clip(np.ceil(X * nu).astype(np.int64) - 1, 0, nu - 1)


def nearest_center(x, nu):
    k = cell_indices(x, nu)
    return (2 * k + 1) / (2 * nu)


def _flat_index(k, nu):
    t = k.shape[1]
    weights = nu ** np.arange(t - 1, -1, -1)
    return k @ weights


@dataclass(frozen=True, eq=False)
class HardInstance:
    t_star: int
    beta_star: float
    beta_tilde: float
    nu: int
    C_gamma: float
    m: int
    sigma: tuple[int, ...]
    w: float
    d: int
    residual_eta: float = 1.0
    noise: NoiseProfile = NoiseProfile(0.0, 1.0)
    diagnostics: dict = field(default_factory=dict)

    name = "hard"

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        cells = self.nu ** self.t_star
        if self.t_star > self.d:
            raise InvalidInputError("t* exceeds the ambient dimension")
        if not 1 <= self.m <= cells:
            raise InvalidInputError(f"need 1 <= m <= nu^t* = {cells}, got m={self.m}")
        if len(self.sigma) != self.m or any(s not in (-1, 1) for s in self.sigma):
            raise InvalidInputError("sigma must hold m signs")
        mass = self.m * self.w
        if not 0 < mass <= 1 + 1e-12:
            raise InvalidInputError(f"need 0 < m w <= 1, got {mass}")
        if mass < 1 - 1e-12 and self.m == cells:
            raise InvalidInputError("no residual cell left for mass 1 - m w")
        if self.C_gamma * self.nu ** (-self.beta_star) > 1:
            raise InvalidInputError("C_gamma nu^{-beta*} must be <= 1")
        if not 0 <= self.residual_eta <= 1:
            raise InvalidInputError("residual_eta must lie in [0, 1]")

    @property
    def amplitude(self):
        """``|eta - 1/2|`` on the inner region of every active cell."""
        return 0.5 * (self.C_gamma * self.nu ** (-self.beta_star)) ** self.beta_tilde

    @property
    def active_mass(self):
        return min(self.m * self.w, 1.0)

    @property
    def active_coordinates(self):
        return list(range(self.t_star))

    @property
    def spec(self):
        return SmoothnessSpec(q=0, dims=(), t=(self.t_star,), beta=(self.beta_star * self.beta_tilde,),
                              ambient_dim=self.d)

    @property
    def closed_form_bayes_risk(self):
        a = self.active_mass
        r = self.residual_eta
        return a * (0.5 - self.amplitude) + (1 - a) * min(r, 1 - r)

    def margin_law(self, t):
        """Exact ``P(|eta - 1/2| <= t)`` under this instance's marginal."""
        p = self.active_mass if t >= self.amplitude else 0.0
        if t >= abs(self.residual_eta - 0.5):
            p += 1 - self.active_mass
        return p

    def bump(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))[:, : self.t_star]
        centers = nearest_center(Z, self.nu)
        r = self.nu * np.linalg.norm(Z - centers, axis=1)
        return self.nu ** (-self.beta_star) * self.C_gamma * gamma(r)

    def eta(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise InvalidInputError(f"expected dimension {self.d}, got {X.shape[1]}")
        Z = X[:, : self.t_star]
        idx = _flat_index(cell_indices(Z, self.nu), self.nu)
        active = idx < self.m
        out = np.full(X.shape[0], float(self.residual_eta))
        if np.any(active):
            sig = np.asarray(self.sigma, dtype=np.float64)[idx[active]]
            out[active] = 0.5 + 0.5 * sig * self.bump(Z[active]) ** self.beta_tilde
        return out

    def sample_x(self, n, rng):
        t, nu = self.t_star, self.nu
        cells = nu ** t
        X = rng.uniform(size=(n, self.d))
        in_active = rng.uniform(size=n) < self.active_mass
        n_act = int(in_active.sum())
        cell = np.empty(n, dtype=np.int64)
        cell[in_active] = rng.integers(0, self.m, size=n_act)
        if n - n_act:
            cell[~in_active] = rng.integers(self.m, cells, size=n - n_act)
        k = np.stack(np.unravel_index(cell, (nu,) * t), axis=1)
        lower = k / nu
        # active mass sits within Euclidean radius 1/(4 nu) of the center, where gamma = 1
        half = 1.0 / (4 * nu * math.sqrt(t))
        offs = rng.uniform(-half, half, size=(n, t))
        centers = (2 * k + 1) / (2 * nu)
        Z = np.where(in_active[:, None], centers + offs, lower + X[:, :t] / nu)
        X[:, :t] = Z
        return X

    def to_dict(self):
        return {
            "family": "hard", "t_star": self.t_star, "beta_star": self.beta_star,
            "beta_tilde": self.beta_tilde, "nu": self.nu, "C_gamma": self.C_gamma, "m": self.m,
            "sigma": list(self.sigma), "w": self.w, "d": self.d, "residual_eta": self.residual_eta,
            "alpha": self.noise.alpha, "C_d": self.noise.C_d,
        }

    @property
    def description(self):
        return self.to_dict()

    @classmethod
    def from_description(cls, desc):
        if "nu" in desc:
            return cls(
                t_star=int(desc["t_star"]), beta_star=float(desc["beta_star"]),
                beta_tilde=float(desc.get("beta_tilde", 1.0)), nu=int(desc["nu"]),
                C_gamma=float(desc["C_gamma"]), m=int(desc["m"]), sigma=tuple(desc["sigma"]),
                w=float(desc["w"]), d=int(desc["d"]), residual_eta=float(desc.get("residual_eta", 1.0)),
                noise=NoiseProfile(float(desc.get("alpha", 0.0)), float(desc.get("C_d", 1.0))),
            )
        spec = SmoothnessSpec(q=0, dims=(), t=(int(desc.get("t_star", 1)),),
                              beta=(float(desc.get("beta_star", 1.0)),))
        return calibrate_hard(int(desc["n"]), int(desc.get("d", 16)), spec, float(desc.get("alpha", 0.0)),
                              float(desc.get("C_d", 1.0)), seed=int(desc.get("seed", 0)),
                              residual_eta=float(desc.get("residual_eta", 1.0)))


def bump_h(x, inst: HardInstance) -> float:
    return float(inst.bump(np.asarray(x, dtype=np.float64)[None, :])[0])


def eta_sigma(x, inst: HardInstance) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == inst.t_star and inst.d > inst.t_star:
        x = np.concatenate([x, np.zeros(inst.d - inst.t_star)])
    return float(inst.eta(x[None, :])[0])


def sample_hard(inst: HardInstance, n, seed):
    from .modular import sample_dataset

    return sample_dataset(inst, n, seed)


def holder_quotient(nu, beta_star, t_star, C_gamma, n_pairs=10_000, seed=0):
    """Largest observed ``|h(x) - h(x')| / ||x - x'||_inf^{min(beta*, 1)}`` over random
    pairs at separations spread log-uniformly between ``1e-4/nu`` and ``1/nu``."""
    rng = np.random.default_rng(seed)
    b = min(beta_star, 1.0)
    x = rng.uniform(size=(n_pairs, t_star))
    scale = 10 ** rng.uniform(-4, 0, size=(n_pairs, 1)) / nu
    xp = np.clip(x + scale * rng.uniform(-1, 1, size=(n_pairs, t_star)), 0, 1)
    h = lambda Z: nu ** (-beta_star) * C_gamma * gamma(nu * np.linalg.norm(Z - nearest_center(Z, nu), axis=1))
    dist = np.max(np.abs(x - xp), axis=1)
    ok = dist > 0
    q = np.abs(h(x) - h(xp))[ok] / dist[ok] ** b
    return float(q.max()) if q.size else 0.0


def select_bump_amplitude(nu, beta_star, t_star, K_star=1.0, n_pairs=10_000, seed=0, k_max=60):
    """Largest ``C_gamma`` in ``{2^-k}`` whose bump passes the Hoelder test with radius ``K_star``."""
    for k in range(k_max + 1):
        c = 2.0 ** (-k)
        if c * nu ** (-beta_star) <= 1 and holder_quotient(nu, beta_star, t_star, c, n_pairs, seed) <= K_star:
            return c
    raise CalibrationError("no bump amplitude passes the Hoelder test")


def calibrate_hard(n, d, spec: SmoothnessSpec, alpha, C_d, seed=0, residual_eta=1.0, K_star=1.0,
                   C_gamma=None) -> HardInstance:
    """Grid resolution, cell count and cell mass with unit constants:

    ``nu0 = ceil(n^{1/e})``, ``nu = ceil(nu0 (ln d)^{1/e})`` with ``e = (2+alpha) beta* + t*``;
    ``w0 = nu^{2 beta*} / n``; ``m = clamp(floor(nu^{-alpha beta*} / w0), 1, cells)``
    (one cell is kept free when ``m w < 1``); ``w = min(w0, 1/m)``.
    """
    if n < 2 or d < 2:
        raise InvalidInputError("need n >= 2 and d >= 2")
    exps = rate_exponents(spec, alpha)
    u = exps.u_star
    beta_star = spec.beta[u]
    t_star = spec.t[u]
    beta_tilde = downstream_exponents(spec.beta)[u]
    e = (2 + alpha) * beta_star + t_star
    nu0 = math.ceil(n ** (1.0 / e))
    nu = max(1, math.ceil(nu0 * math.log(d) ** (1.0 / e)))
    cells = nu ** t_star
    w0 = nu ** (2 * beta_star) / n
    target = nu ** (-alpha * beta_star)
    diag = {"nu0": nu0, "nu": nu, "w0": w0, "target_mass": target, "cells": cells, "exponent": e}
    if w0 > 1:
        raise CalibrationError(f"a single cell needs mass {w0:.4g} > 1; diagnostics: {diag}")
    m = int(min(max(math.floor(target / w0), 1), cells))
    w = min(w0, 1.0 / m)
    if m == cells and m * w < 1 - 1e-12:
        m = cells - 1
        if m < 1:
            raise CalibrationError(f"no room for residual mass; diagnostics: {diag}")
        w = min(w0, 1.0 / m)
    if C_gamma is None:
        C_gamma = select_bump_amplitude(nu, beta_star, t_star, K_star, seed=seed)
    rng = np.random.default_rng(seed)
    sigma = tuple(int(s) for s in rng.choice([-1, 1], size=m))
    diag.update({"m": m, "w": w, "mass": m * w})
    return HardInstance(t_star=t_star, beta_star=beta_star, beta_tilde=beta_tilde, nu=nu, C_gamma=C_gamma,
                        m=m, sigma=sigma, w=w, d=d, residual_eta=residual_eta,
                        noise=NoiseProfile(alpha, C_d), diagnostics=diag)


@dataclass
class MarginReport:
    rows: list
    passed: bool

    def table(self):
        return [dict(r, verdict="PASS" if r["pass"] else "FLAG") for r in self.rows]


def verify_margin(inst: HardInstance, alpha, C_d, t_grid, n_mc=1_000_000, seed=0) -> MarginReport:
    """Monte Carlo check of ``P(|eta - 1/2| <= t) <= C_d t^alpha`` (3-sigma slack) under
    the instance marginal, alongside the exact probabilities."""
    from .modular import margin_probabilities

    t = np.asarray(t_grid, dtype=np.float64)
    if np.any(t <= 0):
        raise InvalidInputError("t grid must be positive")
    p, se = margin_probabilities(inst, t, n_mc, seed)
    rows = []
    for ti, pi, si in zip(t, p, se):
        bound = C_d * ti ** alpha
        rows.append({"t": float(ti), "p_hat": float(pi), "std_error": float(si),
                     "p_exact": inst.margin_law(float(ti)), "bound": float(bound),
                     "pass": bool(pi <= bound + 3 * si)})
    return MarginReport(rows, all(r["pass"] for r in rows))
