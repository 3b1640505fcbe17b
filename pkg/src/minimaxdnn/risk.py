"""Excess-risk estimation, empirical rate fitting and comparison with the theoretical curves."""

from __future__ import annotations

import math
import os
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .architecture import (
    NoiseProfile,
    RateExponents,
    lower_bound_rate,
    rate_exponents,
    size_architecture,
    upper_bound_rate,
)
from .errors import FitError, InvalidInputError, UnsupportedInstanceError
from .modular import bayes_classify, load_instance, sample_dataset
from .network import NetworkArch
from .seeding import mix_seed
from .trainer import TrainConfig, select_dropout, train_erm

QUAD_TOL = 1e-6
SLOPE_BAND = (-1.0, -0.15)


@dataclass(frozen=True)
class RiskEstimate:
    estimate: float
    std_error: float
    n_test: int


def _predictor(classifier):
    if hasattr(classifier, "predict"):
        return classifier.predict
    if callable(classifier):
        return classifier
    raise InvalidInputError("classifier must be callable or expose predict()")


def excess_risk_integrand(classifier, instance, X):
    """``|2 eta - 1| * 1{C(x) != C*(x)}`` at the rows of ``X``."""
    eta = instance.eta(X)
    pred = np.asarray(_predictor(classifier)(X)).reshape(-1)
    return np.abs(2.0 * eta - 1.0) * (np.where(pred >= 0, 1, -1) != bayes_classify(eta))


def mc_excess_risk(classifier, instance, n_test, seed) -> RiskEstimate:
    """Plug-in Monte Carlo estimate of ``R(C) - R(C*)`` using the exact ``eta``.

    No labels are drawn, so the Bayes classifier scores exactly zero. Points come
    from the instance marginal with a generator seeded by ``seed``; classifiers
    evaluated with the same seed share their test points.
    """
    if n_test < 1:
        raise InvalidInputError("n_test must be >= 1")
    X = instance.sample_x(int(n_test), np.random.default_rng(seed))
    vals = excess_risk_integrand(classifier, instance, X)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_test)) if n_test > 1 else 0.0
    return RiskEstimate(float(np.mean(vals)), se, int(n_test))


def analytic_bayes_risk(instance, method="auto") -> float:
    """``E[min(eta, 1 - eta)]``.

    ``method="auto"`` uses a registered closed form when present, otherwise
    adaptive quadrature over at most two active coordinates of a uniform
    marginal (remaining coordinates are irrelevant to ``eta``).
    """
    closed = getattr(instance, "closed_form_bayes_risk", None)
    if method not in ("auto", "closed", "quadrature"):
        raise InvalidInputError(f"unknown method {method!r}")
    if method in ("auto", "closed") and closed is not None:
        return float(closed)
    if method == "closed":
        raise UnsupportedInstanceError("no closed form registered for this instance")
    if not hasattr(instance, "stages"):
        raise UnsupportedInstanceError("quadrature needs a modular instance with uniform marginal")
    active = list(instance.active_coordinates)
    if not 1 <= len(active) <= 2:
        raise UnsupportedInstanceError(f"quadrature supports 1 or 2 active coordinates, got {len(active)}")

    base = np.full(instance.d, 0.5)

    def bayes(*z):
        x = base.copy()
        x[active] = z
        e = float(instance.eta(x[None, :])[0])
        return min(e, 1.0 - e)

    opts = dict(epsabs=QUAD_TOL * 1e-3, epsrel=QUAD_TOL * 1e-3, limit=200)
    if len(active) == 1:
        return float(integrate.quad(bayes, 0.0, 1.0, **opts)[0])
    inner = lambda z1: integrate.quad(lambda z2: bayes(z1, z2), 0.0, 1.0, **opts)[0]
    return float(integrate.quad(inner, 0.0, 1.0, **opts)[0])


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


def fit_rate(ns: Sequence[float], risks: Sequence[float]) -> RateFit:
    """Least squares of ``ln risk`` on ``ln n``; nonpositive risks are dropped."""
    ns = np.asarray(ns, dtype=np.float64)
    risks = np.asarray(risks, dtype=np.float64)
    if ns.shape != risks.shape:
        raise InvalidInputError("ns and risks differ in length")
    ok = risks > 0
    if not np.all(ok):
        warnings.warn(f"excluding {int((~ok).sum())} nonpositive risk values from the fit", stacklevel=2)
    if ok.sum() < 3:
        raise FitError(f"need at least 3 positive risk values, have {int(ok.sum())}")
    lx, ly = np.log(ns[ok]), np.log(risks[ok])
    if np.ptp(lx) == 0:
        raise FitError("all sample sizes are equal")
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / tot if tot > 0 else 1.0
    return RateFit(float(res.slope), float(res.intercept), r2, int(ok.sum()))


@dataclass
class CellResult:
    n: int
    d: int
    seed: int
    replicate: int
    excess_risk: float
    std_error: float
    rho_hat: float | None = None
    train_risk: float | None = None
    feasible: bool | None = None
    arch: dict | None = None
    seconds: float = 0.0
    model: dict | None = field(default=None, repr=False)


@dataclass
class CellError:
    n: int
    d: int
    replicate: int
    message: str


@dataclass
class TheoryComparison:
    s0: float
    slope: float | None
    slope_eps: float | None
    D1: float | None
    D2: float | None
    verdict: str
    band: tuple = SLOPE_BAND
    note: str = ""

    def upper(self, n, d, C_d):
        return upper_bound_rate(n, d, C_d, self.s0, self.D2 or 0.0)

    def lower(self, n, d, C_d):
        return lower_bound_rate(n, d, C_d, self.s0, self.D1 or 0.0)


@dataclass
class RateStudy:
    cells: list
    d: int
    exps: RateExponents | None = None
    noise: NoiseProfile | None = None
    fit: RateFit | None = None
    theory: TheoryComparison | None = None
    errors: list = field(default_factory=list)

    def ns(self):
        return sorted({c.n for c in self.cells})

    def medians(self):
        return {n: float(np.median([c.excess_risk for c in self.cells if c.n == n])) for n in self.ns()}

    def inversions(self):
        """Number of consecutive sample sizes where the median risk goes up."""
        m = list(self.medians().values())
        return sum(b > a for a, b in zip(m, m[1:]))

    def rows(self):
        """CSV rows: one per cell with the theory curves at that ``n``."""
        out = []
        slope = self.fit.slope if self.fit else float("nan")
        for c in sorted(self.cells, key=lambda c: (c.n, c.replicate)):
            lo = up = float("nan")
            if self.theory is not None and self.noise is not None and self.theory.D2 is not None:
                up = self.theory.upper(c.n, c.d, self.noise.C_d)
                lo = self.theory.lower(c.n, c.d, self.noise.C_d)
            out.append({"n": c.n, "d": c.d, "seed": c.seed, "excess_risk": c.excess_risk,
                        "std_error": c.std_error, "theory_lower": lo, "theory_upper": up,
                        "slope_fit": slope})
        return out


def compare_to_theory(study: RateStudy, exps: RateExponents, noise: NoiseProfile, eps=None,
                      band=SLOPE_BAND) -> TheoryComparison:
    """Fit the curve constants and judge the empirical slope.

    ``D2`` is the smallest constant with ``D2 * upper(n) >= estimate + 3 se`` for
    every cell, ``D1`` the largest with ``D1 * lower(n) <= estimate - 3 se``
    (floored at zero). The verdict is PASS when the fitted slope lies in
    ``band`` and the per-n medians have at most one inversion, FLAG otherwise
    and N/A when every estimate is zero.
    """
    cells = study.cells
    s0 = exps.s0
    if not cells or all(c.excess_risk == 0 for c in cells):
        return TheoryComparison(s0, None, None, None, None, "N/A", band, "all estimates are zero")
    d = study.d
    D2 = max((c.excess_risk + 3 * c.std_error) / upper_bound_rate(c.n, d, noise.C_d, s0) for c in cells)
    D1 = min(max(c.excess_risk - 3 * c.std_error, 0.0) / (noise.C_d * (math.log(d) / c.n) ** s0)
             for c in cells) if d >= 2 else None
    fit = study.fit
    if fit is None:
        return TheoryComparison(s0, None, None, D1, D2, "N/A", band, "no rate fit available")
    inversions = study.inversions()
    verdict = "PASS" if band[0] <= fit.slope <= band[1] and inversions <= 1 else "FLAG"
    slope_eps = -(1.0 - eps) * s0 if eps is not None else None
    note = f"fitted slope {fit.slope:.4f} vs -s0 = {-s0:.4f}, {inversions} inversion(s)"
    if slope_eps is not None:
        note += f" and -(1-eps)s0 = {slope_eps:.4f}"
    return TheoryComparison(s0, fit.slope, slope_eps, D1, D2, verdict, band, note)


# --- study runner -------------------------------------------------------------

@dataclass(frozen=True)
class StudyPlan:
    instance: dict
    ns: tuple
    seeds: tuple
    cfg: TrainConfig = TrainConfig()
    candidates: tuple = (0.0, 0.1, 0.2)
    n_test: int = 100_000
    base_seed: int = 0
    arch: dict | None = None  # explicit NetworkArch; auto-sized when None

    def __post_init__(self):
        ns = tuple(int(n) for n in self.ns)
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidInputError("sample sizes must be strictly increasing")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInputError("seeds must be distinct")
        object.__setattr__(self, "ns", ns)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "candidates", tuple(float(c) for c in self.candidates))


def cell_seed(base_seed, n, d, replicate):
    return mix_seed(base_seed, n, d, replicate)


def run_cell(plan: StudyPlan, n: int, replicate: int) -> CellResult:
    t0 = time.perf_counter()
    inst = load_instance(plan.instance)
    d = inst.d
    seed = cell_seed(plan.base_seed, n, d, plan.seeds[replicate])
    data = sample_dataset(inst, n, mix_seed(seed, 0))
    feasible = None
    if plan.arch is None:
        exps = rate_exponents(inst.spec, inst.noise.alpha)
        arch, feasible = size_architecture(n, d, exps, inst.noise)
    else:
        arch = NetworkArch.from_dict(plan.arch)
    cfg = replace(plan.cfg, seed=mix_seed(seed, 1))
    if len(plan.candidates) > 1:
        sel = select_dropout(data, arch, plan.candidates, cfg)
        clf, rho = sel.classifier, sel.rho_hat
    else:
        rho = plan.candidates[0] if plan.candidates else cfg.dropout
        clf = train_erm(data, arch, replace(cfg, dropout=rho))
    est = mc_excess_risk(clf, inst, plan.n_test, mix_seed(seed, 2))
    return CellResult(n, d, seed, replicate, est.estimate, est.std_error, rho, clf.final_risk, feasible,
                      arch.to_dict(), time.perf_counter() - t0, clf.net.to_dict())


def _run_cell_safe(args):
    plan, n, rep = args
    try:
        return run_cell(plan, n, rep)
    except Exception as exc:  # reported per cell, study continues
        msg = f"{type(exc).__name__}: {exc}"
        if os.environ.get("MINIMAXDNN_TRACEBACK"):
            msg += "\n" + traceback.format_exc()
        return CellError(n, int(plan.instance.get("d", 0)), rep, msg)


def rate_study(plan: StudyPlan, threads: int = 1, eps=None) -> RateStudy:
    """Train and evaluate every ``(n, replicate)`` cell, then fit and compare.

    Cells are independent and seeded by ``mix(base_seed, n, d, seed)``, so the
    result does not depend on ``threads``. The slope is fitted to the per-``n``
    median excess risks.
    """
    inst = load_instance(plan.instance)
    tasks = [(plan, n, r) for n in plan.ns for r in range(len(plan.seeds))]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell_safe, tasks))
    else:
        results = [_run_cell_safe(t) for t in tasks]
    cells = [r for r in results if isinstance(r, CellResult)]
    errors = [r for r in results if isinstance(r, CellError)]
    exps = rate_exponents(inst.spec, inst.noise.alpha)
    study = RateStudy(cells, inst.d, exps, inst.noise, errors=errors)
    med = study.medians()
    if len(med) >= 3 and sum(v > 0 for v in med.values()) >= 3:
        study.fit = fit_rate(list(med), list(med.values()))
    study.theory = compare_to_theory(study, exps, inst.noise, eps=eps)
    return study


def cell_to_dict(cell):
    return asdict(cell)
