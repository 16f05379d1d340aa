"""Batched triangular-pattern factorization kernels.

These are the hot inner loops of the library: every Monte-Carlo sample,
grid node, and kernel evaluation goes through a pattern LDL^T
factorization.  Two interchangeable implementations are provided, a
numba @njit path and a vectorized pure-numpy path; `_backend.USE_NUMBA`
(driven by the CONEHARM_BACKEND environment variable) selects one at
import time.  `benchmarks/benchmark_kernels.py` compares the two.

Coordinate layout (fixed everywhere): a pattern-symmetric matrix h or a
pattern-triangular matrix t is stored as a flat vector of length
m = r + npairs, the first r entries being the diagonal and the rest the
off-diagonal entries in column-major pair order.  Values are raw matrix
entries (no sqrt(2) weighting; measures account for it separately).
"""

import numpy as np

from ._backend import USE_NUMBA

if USE_NUMBA:
    from numba import njit
else:  # pragma: no cover - identity decorator keeps one code path importable
    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


class PatternData:
    """Packed index arrays driving the factorization recursions.

    pairs are (k, j) with k > j, sorted by (j, k).  For entry (k, j) the
    forward recursion needs all l < j with (j, l) and (k, l) present; the
    reverse recursion needs all l > k with (l, k) and (l, j) present.
    """

    def __init__(self, rank, pairs):
        self.rank = int(rank)
        self.pairs = sorted((int(k), int(j)) for (k, j) in pairs)
        if self.pairs != sorted(self.pairs, key=lambda p: (p[1], p[0])):
            self.pairs = sorted(self.pairs, key=lambda p: (p[1], p[0]))
        self.npairs = len(self.pairs)
        self.m = self.rank + self.npairs
        index = {}
        for i, (k, j) in enumerate(self.pairs):
            if not (0 <= j < k < self.rank):
                raise ValueError(f"bad pair {(k, j)}")
            index[(k, j)] = self.rank + i
        self._index = index

        r = self.rank
        self.pair_k = np.array([k for (k, j) in self.pairs], dtype=np.int32)
        self.pair_j = np.array([j for (k, j) in self.pairs], dtype=np.int32)

        # forward: pivot j consumes entries (j, l), l < j
        piv_idx, piv_col, piv_off = [], [], [0]
        for j in range(r):
            for l in range(j):
                if (j, l) in index:
                    piv_idx.append(index[(j, l)])
                    piv_col.append(l)
            piv_off.append(len(piv_idx))
        # forward: entry (k, j) consumes (k, l), (j, l), l < j
        pr_a, pr_b, pr_col, pr_off = [], [], [], [0]
        for (k, j) in self.pairs:
            for l in range(j):
                if (k, l) in index and (j, l) in index:
                    pr_a.append(index[(k, l)])
                    pr_b.append(index[(j, l)])
                    pr_col.append(l)
            pr_off.append(len(pr_a))

        # reverse: pivot k consumes entries (l, k), l > k
        rv_idx, rv_col, rv_off = [], [], [0]
        for k in range(r):
            for l in range(k + 1, r):
                if (l, k) in index:
                    rv_idx.append(index[(l, k)])
                    rv_col.append(l)
            rv_off.append(len(rv_idx))
        # reverse: entry (k, j) consumes (l, k), (l, j), l > k
        rp_a, rp_b, rp_col, rp_off = [], [], [], [0]
        for (k, j) in self.pairs:
            for l in range(k + 1, r):
                if (l, k) in index and (l, j) in index:
                    rp_a.append(index[(l, k)])
                    rp_b.append(index[(l, j)])
                    rp_col.append(l)
            rp_off.append(len(rp_a))

        as32 = lambda a: np.array(a, dtype=np.int32)
        self.piv_idx, self.piv_col, self.piv_off = as32(piv_idx), as32(piv_col), as32(piv_off)
        self.pr_a, self.pr_b, self.pr_col, self.pr_off = as32(pr_a), as32(pr_b), as32(pr_col), as32(pr_off)
        self.rv_idx, self.rv_col, self.rv_off = as32(rv_idx), as32(rv_col), as32(rv_off)
        self.rp_a, self.rp_b, self.rp_col, self.rp_off = as32(rp_a), as32(rp_b), as32(rp_col), as32(rp_off)

    def coord(self, k, j):
        """Flat index of entry (k, j) (k >= j)."""
        if k == j:
            return k
        return self._index[(k, j)]

    def has(self, k, j):
        return k == j or (k, j) in self._index


# ---------------------------------------------------------------------------
# pure-numpy implementations (vectorized over the sample axis)
# ---------------------------------------------------------------------------

def _ldl_batch_np(w, pd):
    """Pattern LDL^T of a batch of symmetric pattern matrices.

    Returns (D, L): D (N, r) pivots, L (N, npairs) unit-lower entries.
    Works for real or complex input; zero/negative pivots are the
    caller's problem (they show up in D).
    """
    n = w.shape[0]
    r, npairs = pd.rank, pd.npairs
    D = np.empty((n, r), dtype=w.dtype)
    L = np.zeros((n, npairs), dtype=w.dtype)
    p = 0
    for j in range(r):
        acc = w[:, j].copy()
        for t in range(pd.piv_off[j], pd.piv_off[j + 1]):
            idx, col = pd.piv_idx[t] - r, pd.piv_col[t]
            acc -= L[:, idx] * L[:, idx] * D[:, col]
        D[:, j] = acc
        while p < npairs and pd.pair_j[p] == j:
            acc2 = w[:, r + p].copy()
            for t in range(pd.pr_off[p], pd.pr_off[p + 1]):
                a, b, col = pd.pr_a[t] - r, pd.pr_b[t] - r, pd.pr_col[t]
                acc2 -= L[:, a] * L[:, b] * D[:, col]
            with np.errstate(divide="ignore", invalid="ignore"):
                L[:, p] = acc2 / D[:, j]
            p += 1
    return D, L


def _rev_ldl_batch_np(lam, pd):
    """Reverse pattern LDL (lam = Pi_H(t^T t) solved for t): pivots from the bottom."""
    n = lam.shape[0]
    r, npairs = pd.rank, pd.npairs
    D = np.empty((n, r), dtype=lam.dtype)
    L = np.zeros((n, npairs), dtype=lam.dtype)
    for k in range(r - 1, -1, -1):
        acc = lam[:, k].copy()
        for t in range(pd.rv_off[k], pd.rv_off[k + 1]):
            idx, col = pd.rv_idx[t] - r, pd.rv_col[t]
            acc -= L[:, idx] * L[:, idx] * D[:, col]
        D[:, k] = acc
        for p in range(npairs):
            if pd.pair_k[p] != k:
                continue
            acc2 = lam[:, r + p].copy()
            for t in range(pd.rp_off[p], pd.rp_off[p + 1]):
                a, b, col = pd.rp_a[t] - r, pd.rp_b[t] - r, pd.rp_col[t]
                acc2 -= L[:, a] * L[:, b] * D[:, col]
            with np.errstate(divide="ignore", invalid="ignore"):
                L[:, p] = acc2 / D[:, k]
    return D, L


def _homotopy_logs_np(wre, wim, pd, n_steps):
    """Continuous log of the LDL pivots along tau -> wre + i*tau*wim.

    Returns (theta, bad): theta (N, r) complex with exp(theta_j) = D_j at
    tau=1 and Im theta tracked continuously from the real starting point;
    bad marks samples where some step turned the pivot argument by >= pi/2
    (caller refines those).
    """
    n = wre.shape[0]
    r = pd.rank
    d0, _ = _ldl_batch_np(wre.astype(np.complex128), pd)
    prev_raw = np.angle(d0)
    cont = prev_raw.copy()  # zero up to rounding: wre is in the cone
    logmod = np.log(np.abs(d0))
    bad = np.zeros(n, dtype=bool)
    for i in range(1, n_steps + 1):
        tau = i / n_steps
        D, _ = _ldl_batch_np(wre + 1j * tau * wim, pd)
        raw = np.angle(D)
        diff = raw - prev_raw
        diff -= 2.0 * np.pi * np.round(diff / (2.0 * np.pi))
        bad |= np.any(np.abs(diff) >= 0.5 * np.pi, axis=1)
        bad |= np.any(~np.isfinite(raw), axis=1)
        cont += diff
        prev_raw = raw
        if i == n_steps:
            logmod = np.log(np.abs(D))
    return logmod + 1j * cont, bad


# ---------------------------------------------------------------------------
# numba implementations (per-sample loops)
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def _ldl_batch_nb(w, D, L, r, npairs, piv_idx, piv_col, piv_off,
                  pr_a, pr_b, pr_col, pr_off, pair_j):
    n = w.shape[0]
    for i in range(n):
        p = 0
        for j in range(r):
            acc = w[i, j]
            for t in range(piv_off[j], piv_off[j + 1]):
                idx = piv_idx[t] - r
                acc -= L[i, idx] * L[i, idx] * D[i, piv_col[t]]
            D[i, j] = acc
            while p < npairs and pair_j[p] == j:
                acc2 = w[i, r + p]
                for t in range(pr_off[p], pr_off[p + 1]):
                    acc2 -= L[i, pr_a[t] - r] * L[i, pr_b[t] - r] * D[i, pr_col[t]]
                L[i, p] = acc2 / D[i, j]
                p += 1


@njit(cache=True, error_model="numpy")
def _rev_ldl_batch_nb(lam, D, L, r, npairs, rv_idx, rv_col, rv_off,
                      rp_a, rp_b, rp_col, rp_off, pair_k):
    n = lam.shape[0]
    for i in range(n):
        for k in range(r - 1, -1, -1):
            acc = lam[i, k]
            for t in range(rv_off[k], rv_off[k + 1]):
                idx = rv_idx[t] - r
                acc -= L[i, idx] * L[i, idx] * D[i, rv_col[t]]
            D[i, k] = acc
            for p in range(npairs):
                if pair_k[p] != k:
                    continue
                acc2 = lam[i, r + p]
                for t in range(rp_off[p], rp_off[p + 1]):
                    acc2 -= L[i, rp_a[t] - r] * L[i, rp_b[t] - r] * D[i, rp_col[t]]
                L[i, p] = acc2 / D[i, k]


@njit(cache=True, error_model="numpy")
def _homotopy_logs_nb(wre, wim, r, npairs, piv_idx, piv_col, piv_off,
                      pr_a, pr_b, pr_col, pr_off, pair_j,
                      n_steps, theta_re, theta_im, bad):
    n = wre.shape[0]
    m = wre.shape[1]
    D = np.empty(r, dtype=np.complex128)
    L = np.empty(npairs, dtype=np.complex128)
    w = np.empty(m, dtype=np.complex128)
    prev = np.empty(r, dtype=np.float64)
    cont = np.empty(r, dtype=np.float64)
    two_pi = 2.0 * np.pi
    for i in range(n):
        for step in range(0, n_steps + 1):
            tau = step / n_steps
            for c in range(m):
                w[c] = wre[i, c] + 1j * tau * wim[i, c]
            p = 0
            for j in range(r):
                acc = w[j]
                for t in range(piv_off[j], piv_off[j + 1]):
                    idx = piv_idx[t] - r
                    acc -= L[idx] * L[idx] * D[piv_col[t]]
                D[j] = acc
                while p < npairs and pair_j[p] == j:
                    acc2 = w[r + p]
                    for t in range(pr_off[p], pr_off[p + 1]):
                        acc2 -= L[pr_a[t] - r] * L[pr_b[t] - r] * D[pr_col[t]]
                    L[p] = acc2 / D[j]
                    p += 1
            for j in range(r):
                raw = np.angle(D[j])
                if step == 0:
                    prev[j] = raw
                    cont[j] = raw
                else:
                    diff = raw - prev[j]
                    diff -= two_pi * np.round(diff / two_pi)
                    if np.abs(diff) >= 0.5 * np.pi or not np.isfinite(raw):
                        bad[i] = True
                    cont[j] += diff
                    prev[j] = raw
        for j in range(r):
            theta_re[i, j] = np.log(np.abs(D[j]))
            theta_im[i, j] = cont[j]


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------

def ldl_batch(w, pd):
    w = np.ascontiguousarray(w)
    if USE_NUMBA and w.dtype in (np.float64, np.complex128):
        D = np.empty((w.shape[0], pd.rank), dtype=w.dtype)
        L = np.zeros((w.shape[0], pd.npairs), dtype=w.dtype)
        _ldl_batch_nb(w, D, L, pd.rank, pd.npairs, pd.piv_idx, pd.piv_col,
                      pd.piv_off, pd.pr_a, pd.pr_b, pd.pr_col, pd.pr_off, pd.pair_j)
        return D, L
    return _ldl_batch_np(w, pd)


def rev_ldl_batch(lam, pd):
    lam = np.ascontiguousarray(lam)
    if USE_NUMBA and lam.dtype in (np.float64, np.complex128):
        D = np.empty((lam.shape[0], pd.rank), dtype=lam.dtype)
        L = np.zeros((lam.shape[0], pd.npairs), dtype=lam.dtype)
        _rev_ldl_batch_nb(lam, D, L, pd.rank, pd.npairs, pd.rv_idx, pd.rv_col,
                          pd.rv_off, pd.rp_a, pd.rp_b, pd.rp_col, pd.rp_off, pd.pair_k)
        return D, L
    return _rev_ldl_batch_np(lam, pd)


def homotopy_pivot_logs(wre, wim, pd, max_steps=64):
    """Branch-tracked pivot logs for w = wre + i*wim, Re w in the cone.

    Starts with 8 homotopy steps and doubles (per failing sample) up to
    max_steps.  Returns (theta, ambiguous): theta (N, r) complex128,
    ambiguous a bool mask of samples still turning too fast at max_steps.
    """
    wre = np.ascontiguousarray(wre, dtype=np.float64)
    wim = np.ascontiguousarray(wim, dtype=np.float64)
    n = wre.shape[0]
    theta = np.empty((n, pd.rank), dtype=np.complex128)
    pending = np.arange(n)
    steps = 8
    while True:
        sub_re, sub_im = wre[pending], wim[pending]
        if USE_NUMBA:
            t_re = np.empty((len(pending), pd.rank))
            t_im = np.empty((len(pending), pd.rank))
            bad = np.zeros(len(pending), dtype=np.bool_)
            _homotopy_logs_nb(sub_re, sub_im, pd.rank, pd.npairs, pd.piv_idx,
                              pd.piv_col, pd.piv_off, pd.pr_a, pd.pr_b, pd.pr_col,
                              pd.pr_off, pd.pair_j, steps, t_re, t_im, bad)
            th = t_re + 1j * t_im
        else:
            th, bad = _homotopy_logs_np(sub_re, sub_im, pd, steps)
        theta[pending] = th
        pending = pending[bad]
        if len(pending) == 0:
            return theta, np.zeros(n, dtype=bool)
        if steps >= max_steps:
            ambiguous = np.zeros(n, dtype=bool)
            ambiguous[pending] = True
            return theta, ambiguous
        steps = min(2 * steps, max_steps)
