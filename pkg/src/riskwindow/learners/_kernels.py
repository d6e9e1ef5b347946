"""Compiled inner loops of the histogram tree builder."""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def histograms(Xb, rows, local, stats, feat_ok, n_nodes, n_bins):
    """hist[node, feature, bin, channel] summed over the rows of each node;
    features with ``feat_ok[node, f] == False`` are skipped."""
    n_feat = Xb.shape[1]
    C = stats.shape[1]
    hist = np.zeros((n_nodes, n_feat, n_bins, C))
    for i in range(rows.shape[0]):
        r = rows[i]
        nd = local[i]
        for f in range(n_feat):
            if feat_ok[nd, f]:
                b = Xb[r, f]
                for c in range(C):
                    hist[nd, f, b, c] += stats[r, c]
    return hist


@numba.njit(cache=True)
def _impurity(p, entropy):
    if entropy:
        out = 0.0
        if p > 0.0:
            out -= p * math.log2(p)
        if p < 1.0:
            out -= (1.0 - p) * math.log2(1.0 - p)
        return out
    return 2.0 * p * (1.0 - p)


@numba.njit(cache=True)
def _soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@numba.njit(cache=True)
def best_class_splits(hist, totals, n_thr, feat_ok, min_leaf, entropy):
    k, n_feat, n_bins, _ = hist.shape
    best_f = np.full(k, -1, dtype=np.int64)
    best_b = np.full(k, -1, dtype=np.int64)
    best_g = np.full(k, -np.inf)
    for nd in range(k):
        W = totals[nd, 0]
        P = totals[nd, 1]
        parent = W * _impurity(P / W, entropy)
        for f in range(n_feat):
            if not feat_ok[nd, f]:
                continue
            wl = 0.0
            pl = 0.0
            for b in range(n_thr[f]):
                wl += hist[nd, f, b, 0]
                pl += hist[nd, f, b, 1]
                wr = W - wl
                if wl < min_leaf or wr < min_leaf:
                    continue
                pr = P - pl
                g = parent - wl * _impurity(pl / wl, entropy) - wr * _impurity(pr / wr, entropy)
                if g > best_g[nd]:
                    best_g[nd] = g
                    best_f[nd] = f
                    best_b[nd] = b
    return best_f, best_b, best_g


@numba.njit(cache=True)
def best_grad_splits(hist, totals, n_thr, feat_ok, min_leaf, min_child_weight, lam, alpha, gamma):
    k, n_feat, n_bins, _ = hist.shape
    best_f = np.full(k, -1, dtype=np.int64)
    best_b = np.full(k, -1, dtype=np.int64)
    best_g = np.full(k, -np.inf)
    for nd in range(k):
        N = totals[nd, 0]
        G = totals[nd, 1]
        H = totals[nd, 2]
        sg = _soft(G, alpha)
        parent = sg * sg / (H + lam)
        for f in range(n_feat):
            if not feat_ok[nd, f]:
                continue
            nl = 0.0
            gl = 0.0
            hl = 0.0
            for b in range(n_thr[f]):
                nl += hist[nd, f, b, 0]
                gl += hist[nd, f, b, 1]
                hl += hist[nd, f, b, 2]
                hr = H - hl
                if hl < min_child_weight or hr < min_child_weight:
                    continue
                if nl < min_leaf or N - nl < min_leaf:
                    continue
                sl = _soft(gl, alpha)
                sr = _soft(G - gl, alpha)
                g = 0.5 * (sl * sl / (hl + lam) + sr * sr / (hr + lam) - parent) - gamma
                if g > best_g[nd]:
                    best_g[nd] = g
                    best_f[nd] = f
                    best_b[nd] = b
    return best_f, best_b, best_g


@numba.njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        nd = 0
        while feature[nd] >= 0:
            if X[i, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = nd
    return out
