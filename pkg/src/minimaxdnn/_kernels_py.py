"""Pure numpy kernels. Reference semantics for the compiled ``_kernels`` module.

Layer convention: ``z0 = X W0^T``; for hidden layer l, ``a_l = relu(z_{l-1} - V_l) * mask_l``
and ``z_l = a_l W_l^T``. The scalar output is clamped to ``[-B, B]``.
"""

import numpy as np


def forward_batch(weights, shifts, X, bound):
    z = X @ weights[0].T
    for W, V in zip(weights[1:], shifts):
        z = np.maximum(z - V, 0.0) @ W.T
    return np.clip(z[:, 0], -bound, bound)


def hinge_risk_grad(weights, shifts, X, y, bound, masks=None):
    """Mean hinge risk and its subgradient w.r.t. every weight and shift.

    Kink conventions: hinge slope is 0 at margin exactly 1, ReLU slope is 0 at
    exactly 0, the clamp passes gradient only for ``|f| <= B``.
    """
    n = X.shape[0]
    pre = [X @ weights[0].T]
    acts = []
    for l, (W, V) in enumerate(zip(weights[1:], shifts)):
        a = np.maximum(pre[-1] - V, 0.0)
        if masks is not None:
            a = a * masks[l]
        acts.append(a)
        pre.append(a @ W.T)
    out = pre[-1][:, 0]
    f = np.clip(out, -bound, bound)
    margin = y * f
    risk = float(np.maximum(1.0 - margin, 0.0).sum() / n)

    g = np.where((margin < 1.0) & (np.abs(out) <= bound), -y, 0.0) / n
    delta = g[:, None]
    L = len(shifts)
    grad_w = [None] * (L + 1)
    grad_v = [None] * L
    for l in range(L, 0, -1):
        grad_w[l] = delta.T @ acts[l - 1]
        da = delta @ weights[l]
        if masks is not None:
            da = da * masks[l - 1]
        dz = da * ((pre[l - 1] - shifts[l - 1]) > 0.0)
        grad_v[l - 1] = -dz.sum(axis=0)
        delta = dz
    grad_w[0] = delta.T @ X
    return risk, grad_w, grad_v


def clip_prune(arr, s, bound):
    """Clip entries to ``[-B, B]`` then keep the ``s`` largest magnitudes in place.

    Ties in magnitude are broken by the lowest flat index.
    """
    flat = arr.reshape(-1)
    np.clip(flat, -bound, bound, out=flat)
    if flat.size > s:
        order = np.argsort(-np.abs(flat), kind="stable")
        flat[order[s:]] = 0.0
    return arr
