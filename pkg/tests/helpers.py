"""Independent oracles shared by the test suite.

Everything here recomputes expected values from first principles (finite
differences, explicit summation, exhaustive enumeration) and deliberately
shares no code with the library paths it checks.
"""
from __future__ import annotations

import math

import numpy as np


def finite_difference(f, arrays, h=1e-5):
    """Central-difference gradients of the scalar ``f()`` w.r.t. each array.

    ``f`` must read the (mutated in place) arrays on every call.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-7):
    """Worst-case relative error with an absolute floor on the denominator."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def enumerate_pair_sets(y, s, strategy, ybar, sbar, s0_negative_pool="same_s"):
    """Brute-force per-anchor positive/negative index sets by predicate."""
    B = len(y)
    pos, neg = [], []
    for i in range(B):
        p, n = [], []
        for j in range(B):
            if j == i:
                continue
            if strategy == "S1":
                if y[j] == y[i] and s[j] == sbar[i]:
                    p.append(j)
                if y[j] == ybar[i]:
                    n.append(j)
            elif strategy == "S2":
                if y[j] == y[i] and s[j] == sbar[i]:
                    p.append(j)
                if y[j] == ybar[i] and s[j] == s[i]:
                    n.append(j)
            elif strategy == "S0":
                if s[j] == sbar[i]:
                    p.append(j)
                if s0_negative_pool == "all" or s[j] == s[i]:
                    n.append(j)
            else:
                raise ValueError(strategy)
        pos.append(p)
        neg.append(n)
    return pos, neg


def scalar_regularizer(z, pos, neg, tau_p, tau_n, normalize=True):
    """From-scratch scalar recomputation of the contrastive penalty.

    Pure-python loops and math.* only; returns (value, active_count).
    """
    z = [list(map(float, row)) for row in np.asarray(z)]
    if normalize:
        z = [[v / math.sqrt(sum(u * u for u in row)) for v in row] for row in z]

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    total = 0.0
    active = 0
    for i in range(len(z)):
        if not pos[i] or not neg[i]:
            continue
        active += 1
        lse = math.log(sum(math.exp(dot(z[i], z[j]) / tau_n) for j in neg[i]))
        contrib = sum(dot(z[i], z[j]) / tau_p - lse for j in pos[i]) / len(pos[i])
        total -= contrib
    return total, active


def generic_infonce(anchor, positive, pool, tau):
    """-log( exp(a.p/tau) / sum_{c in pool} exp(a.c/tau) ), direct summation."""
    num = math.exp(float(np.dot(anchor, positive)) / tau)
    den = sum(math.exp(float(np.dot(anchor, c)) / tau) for c in pool)
    return -math.log(num / den)


def pareto_oracle(points):
    """O(n^2) dominance flags for (sensitive_acc down, main_acc up) points."""
    flags = []
    for i, (si, mi) in enumerate(points):
        dominated = False
        for j, (sj, mj) in enumerate(points):
            if i == j:
                continue
            if sj <= si and mj >= mi and (sj < si or mj > mi):
                dominated = True
                break
        flags.append(not dominated)
    return flags


def mc_bayes_accuracy(cfg, mode, n=200_000, seed=123456):
    """Monte-Carlo Bayes accuracy for the synthetic generator.

    mode="full": argmax_y sum_s p(y,s) N(x; mu_ys, sigma^2 I) over all feature
    dimensions. mode="y_only": same posterior but restricted to the feature
    dimensions where the class means actually differ, i.e. the accuracy
    available to a representation carrying no sensitive-group information.
    """
    rng = np.random.default_rng(seed)
    means = np.stack(
        [np.stack([np.asarray(cfg.means[(yy, ss)], dtype=float)
                   for ss in range(cfg.num_sensitive)])
         for yy in range(cfg.num_classes)]
    )  # (Y, S, D)
    pys = np.zeros((cfg.num_classes, cfg.num_sensitive))
    for yy in range(cfg.num_classes):
        for ss in range(cfg.num_sensitive):
            match = ss == yy % cfg.num_sensitive
            pys[yy, ss] = (1.0 / cfg.num_classes) * (
                (1.0 - cfg.rho) / cfg.num_sensitive + (cfg.rho if match else 0.0)
            )

    if mode == "y_only":
        spread = means.max(axis=(0, 1)) - means.min(axis=(0, 1))
        per_class_spread = means.max(axis=1) - means.min(axis=1)  # (Y, D)
        class_varies = (means.max(axis=0) - means.min(axis=0)).max(axis=0) > 0
        group_varies = per_class_spread.max(axis=0) > 0
        dims = np.flatnonzero(class_varies & ~group_varies)
        if dims.size == 0:
            raise ValueError("no class-only dimensions in this configuration")
    else:
        dims = np.arange(means.shape[2])

    flat = pys.reshape(-1)
    y_of = np.repeat(np.arange(cfg.num_classes), cfg.num_sensitive)
    comp = rng.choice(flat.size, size=n, p=flat / flat.sum())
    x = means.reshape(-1, means.shape[2])[comp] + rng.normal(
        0.0, cfg.noise_sigma, size=(n, means.shape[2])
    )

    x_used = x[:, dims]
    mu_used = means.reshape(-1, means.shape[2])[:, dims]
    # log p(y,s) - ||x-mu||^2 / (2 sigma^2), then logsumexp over s per class
    d2 = ((x_used[:, None, :] - mu_used[None, :, :]) ** 2).sum(axis=2)
    logp = np.log(flat)[None, :] - d2 / (2.0 * cfg.noise_sigma**2)
    per_class = np.full((n, cfg.num_classes), -np.inf)
    for yy in range(cfg.num_classes):
        cols = np.flatnonzero(y_of == yy)
        m = logp[:, cols].max(axis=1)
        per_class[:, yy] = m + np.log(np.exp(logp[:, cols] - m[:, None]).sum(axis=1))
    pred = per_class.argmax(axis=1)
    return float(np.mean(pred == y_of[comp]))
