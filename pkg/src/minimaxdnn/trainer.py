"""Hinge-loss empirical risk minimization over F(L, s, B, p) and dropout selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .network import NetworkArch, SparseNetwork, class_membership, glorot_init
from .seeding import mix_seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    step_size: float = 0.1
    step_decay: float = 1.0  # multiplier applied after every accepted epoch
    dropout: float = 0.0
    projection_period: int = 1
    sparsity_warmup: int = 40  # dense-to-sparse epochs, capped at epochs - 1; 0 disables
    init: str = "glorot_uniform"
    init_gain: float = math.sqrt(2.0)  # multiplies the scaled-uniform bound; keeps ReLU signal scale
    seed: int = 0
    max_retries: int = 5
    restarts: int = 3  # independent initializations; the lowest training risk wins

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.projection_period < 1 or self.restarts < 1:
            raise InvalidInputError("epochs, batch_size, projection_period and restarts must be positive")
        if not self.step_size > 0 or not 0 < self.step_decay <= 1:
            raise InvalidInputError("need step_size > 0 and 0 < step_decay <= 1")
        if self.sparsity_warmup < 0:
            raise InvalidInputError("sparsity_warmup must be >= 0")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError("dropout must lie in [0, 1)")
        if not self.init_gain > 0:
            raise InvalidInputError("init_gain must be > 0")
        if self.init != "glorot_uniform":
            raise InvalidInputError(f"unknown init {self.init!r}")

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(eq=False)
class TrainedClassifier:
    net: SparseNetwork
    final_risk: float
    initial_risk: float
    epochs_run: int
    history: list = field(default_factory=list)
    rho: float | None = None
    refit: bool = False

    def decision_function(self, X):
        return self.net(X)

    def predict(self, X):
        return np.where(self.net(X) >= 0.0, 1, -1)

    def __call__(self, X):
        return self.predict(X)


def _xy(data, y=None):
    if y is None:
        X, y = data.X, data.y
    else:
        X = data
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("empty data")
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError("X and y lengths differ")
    return X, y


def _risk(ws, vs, X, y, B):
    f = kernels.forward_batch(ws, vs, X, B)
    return float(np.mean(np.maximum(1.0 - y * f, 0.0)))


def _warmup_budget(size, s, epoch, warmup):
    """Nonzero budget during the dense-to-sparse warm-up (cubic schedule)."""
    if epoch >= warmup or size <= s:
        return s
    frac = (1.0 - (epoch + 1) / warmup) ** 3
    return s + math.ceil((size - s) * frac)


def train_erm(data, arch: NetworkArch, cfg: TrainConfig, y=None) -> TrainedClassifier:
    """Minibatch projected subgradient descent on the empirical hinge risk.

    Runs ``cfg.restarts`` independent initializations (the first uses ``cfg.seed``,
    restart ``k`` uses ``mix_seed(cfg.seed, k)``) and keeps the network with the
    lowest training risk, ties to the earliest.

    Hidden units get per-update Bernoulli dropout masks (rescaled by
    ``1/(1 - rho)``). Every ``projection_period`` updates each parameter array is
    clipped to ``[-B, B]`` and pruned to its largest entries. During the first
    ``sparsity_warmup`` epochs the number of kept entries shrinks from dense to
    ``s``; afterwards it is ``s``.

    After each epoch the training risk of the iterate, pruned to that epoch's
    budget, is compared with the risk of the epoch's starting point pruned to the
    same budget. An increase undoes the epoch and halves the step size, at most
    ``max_retries`` times in a row, after which training stops. The returned
    network is the projection of the last accepted iterate, or the projected
    initialization should that have lower training risk.
    """
    X, y = _xy(data, y)
    if X.shape[1] != arch.d:
        raise InvalidInputError(f"architecture expects d={arch.d}, data has {X.shape[1]}")
    best = None
    for k in range(cfg.restarts):
        clf = _train_once(X, y, arch, cfg, cfg.seed if k == 0 else mix_seed(cfg.seed, k))
        if best is None or clf.final_risk < best.final_risk:
            best = clf
    return best


def _train_once(X, y, arch, cfg, seed):
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    net = glorot_init(arch, rng, cfg.init_gain)
    ws = [w.copy() for w in net.weights]
    vs = [v.copy() for v in net.shifts]
    params = ws + vs
    nw = len(ws)
    B, s = arch.B, arch.s
    keep = 1.0 - cfg.dropout
    hidden = arch.widths[1:-1]

    def pruned(arrays, budgets):
        out = [p.copy() for p in arrays]
        for p, k in zip(out, budgets):
            kernels.clip_prune(p, k, B)
        return out

    def risk_of(arrays):
        return _risk(arrays[:nw], arrays[nw:], X, y, B)

    warmup = min(cfg.sparsity_warmup, cfg.epochs - 1)
    final_budgets = [s] * len(params)
    start_net = pruned(params, final_budgets)
    initial = risk_of(start_net)
    history = [initial]
    lr = cfg.step_size
    epochs = retries = updates = 0
    while epochs < cfg.epochs:
        budgets = [_warmup_budget(p.size, s, epochs, warmup) for p in params]
        saved = [p.copy() for p in params]
        reference = risk_of(pruned(saved, budgets))
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            masks = None
            if cfg.dropout > 0:
                masks = [(rng.random((idx.size, p)) < keep) / keep for p in hidden]
            _, gw, gv = kernels.hinge_risk_grad(ws, vs, X[idx], y[idx], B, masks)
            for p, g in zip(params, gw + gv):
                p -= lr * g
            updates += 1
            if updates % cfg.projection_period == 0:
                for p, k in zip(params, budgets):
                    kernels.clip_prune(p, k, B)
        new_risk = risk_of(pruned(params, budgets))
        if new_risk > reference:
            for p, old in zip(params, saved):
                p[...] = old
            lr *= 0.5
            retries += 1
            if retries > cfg.max_retries:
                break
            continue
        retries = 0
        history.append(new_risk)
        epochs += 1
        lr *= cfg.step_decay

    best = pruned(params, final_budgets)
    risk = risk_of(best)
    if risk > initial:
        best, risk = start_net, initial
    final = SparseNetwork(arch, tuple(best[:nw]), tuple(best[nw:]))
    assert class_membership(final).in_class
    return TrainedClassifier(final, risk, initial, epochs, history, rho=cfg.dropout)


def classify(clf, x) -> int:
    net = clf.net if isinstance(clf, TrainedClassifier) else clf
    return 1 if float(net(np.asarray(x, dtype=np.float64)[None, :])[0]) >= 0.0 else -1


def test_error(clf, data, y=None) -> float:
    """Fraction of points with ``f(x) y < 0``; zero outputs do not count as errors."""
    X, y = _xy(data, y)
    net = clf.net if isinstance(clf, TrainedClassifier) else clf
    return float(np.mean(net(X) * y < 0))


test_error.__test__ = False


@dataclass
class SelectionResult:
    rho_hat: float
    table: list
    classifier: TrainedClassifier
    train_index: np.ndarray
    test_index: np.ndarray
    refit: bool = True


def split_indices(n, seed):
    """Random split with ``ceil(0.7 n)`` training points."""
    perm = np.random.default_rng(seed).permutation(n)
    k = math.ceil(0.7 * n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def select_dropout(data, arch: NetworkArch, candidates, cfg: TrainConfig, y=None) -> SelectionResult:
    """Pick the dropout rate minimizing held-out test error on one 70/30 split, then
    refit on all data with the chosen rate. Ties go to the smallest rate."""
    X, y = _xy(data, y)
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise InvalidInputError("no dropout candidates")
    if X.shape[0] < 10:
        raise InvalidInputError("need at least 10 points for selection")
    tr, te = split_indices(X.shape[0], mix_seed(cfg.seed, 1))
    table = []
    for i, rho in enumerate(cands):
        sub = replace(cfg, dropout=rho, seed=mix_seed(cfg.seed, 2, i))
        clf = train_erm(X[tr], arch, sub, y=y[tr])
        out = clf.net(X[te])
        table.append({
            "rho": rho,
            "test_error": float(np.mean(out * y[te] < 0)),
            "train_risk": clf.final_risk,
            "degenerate": bool(np.all(out == 0.0)),
        })
    errs = [row["test_error"] for row in table]
    best = int(np.argmin(errs))
    rho_hat = cands[best]
    final = train_erm(X, arch, replace(cfg, dropout=rho_hat, seed=mix_seed(cfg.seed, 3)), y=y)
    final.refit = True
    return SelectionResult(rho_hat, table, final, tr, te)
