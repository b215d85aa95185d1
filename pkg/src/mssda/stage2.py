"""Latent-domain discovery from convolutional feature statistics.

Each sample is summarized by the per-channel mean and population standard
deviation of its final conv feature map - a 2C-dimensional style coordinate.
Those coordinates are reduced to 2-D by PCA, a Gaussian mixture is fitted by
EM for each candidate component count K, and the K minimizing BIC wins.
Source samples are then assigned the mixture component with the highest
responsibility; these become the pseudo sub-source domains whose centers
drive downstream selection. Target samples participate in PCA/GMM fitting
but are never assigned labels.

EM keeps every covariance eigenvalue at or above a floor (1e-6), which both
guards against collapse and keeps the M-step an exact maximizer over the
floored model family - so the log-likelihood trace is truly non-decreasing.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .nn import Network
from .nn import tensor as T

# -- channel statistics --------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma])


def feature_stats(feature_map: np.ndarray) -> FeatureStats:
    """Per-channel mean and population std of a (C, L) feature map."""
    m = np.asarray(feature_map, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 1:
        raise InputError(f"feature_stats: expected (C, L) with L >= 1, got {m.shape}")
    return FeatureStats(mu=m.mean(axis=1), sigma=m.std(axis=1))


def stats_from_maps(maps: np.ndarray) -> np.ndarray:
    """Batch version: (N, C, L) maps -> (N, 2C) [mu | sigma] coordinates."""
    m = np.asarray(maps, dtype=np.float64)
    if m.ndim != 3 or m.shape[2] < 1:
        raise InputError(f"stats_from_maps: expected (N, C, L) with L >= 1, got {m.shape}")
    return np.concatenate([m.mean(axis=2), m.std(axis=2)], axis=1)


def extract_feature_maps(net: Network, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Final conv maps for inputs (N, C, T), evaluated in batches."""
    dtype = next(iter(net.params.values())).data.dtype if net.params else np.float64
    outs = []
    for lo in range(0, len(x), batch):
        outs.append(net.forward(x[lo:lo + batch].astype(dtype)).data)
    return np.concatenate(outs)


# -- PCA -------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (2, d), orthonormal rows
    explained: np.ndarray   # (2,) variances along the components
    degenerate: bool

    def transform(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean


def fit_pca(points: np.ndarray) -> PcaModel:
    """Top-2 principal directions by eigendecomposition of the covariance.

    Sign convention: each component's largest-magnitude entry is positive.
    Rank-deficient inputs keep eigh's orthonormal completion for the second
    direction and set the degenerate flag.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise InputError(f"fit_pca: need an (n >= 3, d) matrix, got {pts.shape}")
    if pts.shape[1] < 2:
        raise InputError(f"fit_pca: need at least 2 feature dimensions, got {pts.shape[1]}")
    mean = pts.mean(axis=0)
    cov = np.cov(pts - mean, rowvar=False, ddof=1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    comps = eigvecs[:, order].T.copy()
    explained = np.maximum(eigvals[order], 0.0)
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    degenerate = bool(explained[1] < 1e-12 * max(explained[0], 1.0))
    return PcaModel(mean=mean, components=comps, explained=explained,
                    degenerate=degenerate)


# -- Gaussian mixture by EM -------------------------------------------------------


@dataclass
class GmmModel:
    weights: np.ndarray       # (K,)
    means: np.ndarray         # (K, d)
    covariances: np.ndarray   # (K, d, d), eigenvalues >= floor
    ll_trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _log_joint(self, points: np.ndarray) -> np.ndarray:
        """log(pi_k N(x | mu_k, Sigma_k)) as an (n, K) matrix.

        All K components go through stacked Cholesky factorizations at once;
        the triangular systems are tiny (d = 2 normally) so one batched
        solve call covers the whole mixture.
        """
        x = np.asarray(points, dtype=np.float64)
        n, d = x.shape
        chol = np.linalg.cholesky(self.covariances)            # (K, d, d)
        diff = x[None, :, :] - self.means[:, None, :]          # (K, n, d)
        z = np.linalg.solve(chol, diff.transpose(0, 2, 1))     # (K, d, n)
        quad = np.sum(z * z, axis=1)                           # (K, n)
        logdet = 2.0 * np.sum(
            np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)  # (K,)
        out = (np.log(self.weights)[:, None]
               - 0.5 * (d * np.log(2.0 * np.pi) + logdet[:, None] + quad))
        return out.T

    def log_prob(self, points: np.ndarray) -> np.ndarray:
        lj = self._log_joint(points)
        m = lj.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(lj - m).sum(axis=1, keepdims=True)))[:, 0]

    def loglik(self, points: np.ndarray) -> float:
        return float(self.log_prob(points).sum())

    def responsibilities(self, points: np.ndarray) -> np.ndarray:
        lj = self._log_joint(points)
        m = lj.max(axis=1, keepdims=True)
        e = np.exp(lj - m)
        return e / e.sum(axis=1, keepdims=True)


def _floor_spd(covs: np.ndarray, floor: float) -> np.ndarray:
    """Project symmetric matrices (stacked or single) to eigenvalues >= floor.

    Flooring instead of adding a ridge keeps the M-step an exact maximizer
    over the floored covariance family, preserving EM's monotonicity.
    """
    sym = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(sym)
    scaled = vecs * np.maximum(vals, floor)[..., None, :]
    return scaled @ np.swapaxes(vecs, -1, -2)


def _kmeanspp_centers(points: np.ndarray, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[int(rng.integers(n))]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:  # every point coincides with a chosen center
            centers.append(points[int(rng.integers(n))])
            continue
        r = rng.random() * total
        centers.append(points[int(np.searchsorted(np.cumsum(d2), r))])
        np.minimum(d2, np.sum((points - centers[-1]) ** 2, axis=1), out=d2)
    return np.stack(centers)


def fit_gmm(points2d: np.ndarray, k: int, seed: int, restarts: int = 5,
            max_iter: int = 500, tol: float = 1e-6,
            ridge: float = 1e-6) -> GmmModel:
    """Full-covariance mixture via EM; best of `restarts` k-means++ starts.

    Each restart seeds means with k-means++ draws and takes the rest of its
    initial parameters from that hard partition (per-cluster weight, mean and
    covariance). Convergence: relative change in log-likelihood below `tol`
    (|ΔLL| <= tol * max(|LL|, 1)), or `max_iter` update sweeps. The winning
    restart is the one with the highest final log-likelihood (ties keep the
    earliest restart).

    2-D inputs (the standard path) run a heavily vectorized EM where all
    restarts advance together and each E-step is a single matrix product;
    other dimensionalities use a plain stacked-LAPACK implementation.
    """
    x = np.asarray(points2d, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"fit_gmm: expected (n, d) points, got {x.shape}")
    n, d = x.shape
    if k < 1 or k > n:
        raise InputError(f"fit_gmm: need 1 <= K <= n ({n}), got K={k}")
    if d == 2:
        return _fit_gmm_2d(x, k, seed, restarts, max_iter, tol, ridge)
    return _fit_gmm_general(x, k, seed, restarts, max_iter, tol, ridge)


def _init_means(x: np.ndarray, k: int, seed: int, restarts: int) -> list[np.ndarray]:
    return [
        _kmeanspp_centers(
            x, k, np.random.default_rng(np.random.SeedSequence([seed, 21, r])))
        for r in range(restarts)
    ]


def _best_model(candidates: list[GmmModel]) -> GmmModel:
    best = candidates[0]
    for model in candidates[1:]:
        if model.ll_trace[-1] > best.ll_trace[-1]:
            best = model
    return best


_LOG_2PI = float(np.log(2.0 * np.pi))


def _floor_abc(a: np.ndarray, b: np.ndarray, c: np.ndarray, floor: float):
    """Eigenvalue-floor symmetric 2x2 matrices given as (a, b; b, c) arrays.

    Returns floored (a, b, c) plus the floored smallest eigenvalue, using the
    closed-form 2x2 eigendecomposition (no LAPACK calls).
    """
    half_tr = 0.5 * (a + c)
    disc = np.hypot(0.5 * (a - c), b)
    lmin = half_tr - disc
    bad = lmin < floor
    if bad.any():
        a, b, c = a.copy(), b.copy(), c.copy()
        lmax = np.maximum(half_tr + disc, floor)
        lmin_f = np.maximum(lmin, floor)
        for idx in zip(*np.nonzero(bad)):
            if abs(b[idx]) > 0.0:
                v0, v1 = b[idx], lmax[idx] - a[idx]
                nrm = np.hypot(v0, v1)
                v0, v1 = v0 / nrm, v1 / nrm
            elif a[idx] >= c[idx]:
                v0, v1 = 1.0, 0.0
            else:
                v0, v1 = 0.0, 1.0
            lo = lmin_f[idx]
            hi = lmax[idx]
            a[idx] = hi * v0 * v0 + lo * v1 * v1
            b[idx] = (hi - lo) * v0 * v1
            c[idx] = hi * v1 * v1 + lo * v0 * v0
        lmin = np.maximum(lmin, floor)
    return a, b, c, lmin


def _fit_gmm_2d(x: np.ndarray, k: int, seed: int, restarts: int,
                max_iter: int, tol: float, ridge: float) -> GmmModel:
    """All restarts advance in one stacked state; E-step is one GEMM.

    The data are standardized isotropically (z = (x - mean)/s with scalar s),
    which leaves k-means++ draws, responsibilities, and log-likelihood
    *differences* exactly unchanged while keeping the moment arithmetic well
    conditioned; the covariance floor is rescaled so it still equals `ridge`
    in data units. Log-joints are evaluated as a quadratic polynomial in
    (1, z0, z1, z0^2, z0*z1, z1^2) - a single (n, 6) @ (6, R*K) product -
    except when a component's covariance gets within a factor 100 of the
    floor, where the explicit centered form is used to avoid cancellation.
    """
    n = x.shape[0]
    center = x.mean(axis=0)
    scale = float(x.std()) or 1.0
    z = (x - center) / scale
    z0 = np.ascontiguousarray(z[:, 0])
    z1 = np.ascontiguousarray(z[:, 1])
    floor = ridge / scale**2
    g_mat = np.stack([np.ones(n), z0, z1, z0 * z0, z0 * z1, z1 * z1], axis=1)

    cov_g = np.cov(z, rowvar=False, bias=True)
    init = _init_means(z, k, seed, restarts)

    # stacked mutable state, one row per live restart; every restart starts
    # from its k-means++ hard partition's weights, means and covariances
    mu0 = np.stack([m[:, 0] for m in init])
    mu1 = np.stack([m[:, 1] for m in init])
    w = np.empty((restarts, k))
    a = np.empty((restarts, k))
    b = np.empty((restarts, k))
    c = np.empty((restarts, k))
    for r, centers in enumerate(init):
        d2 = ((z[:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        for j in range(k):
            sel = z[labels == j]
            if len(sel) == 0:  # duplicate seed centers can leave one empty
                w[r, j] = 1.0 / n
                a[r, j], b[r, j], c[r, j] = cov_g[0, 0], cov_g[0, 1], cov_g[1, 1]
                continue
            w[r, j] = len(sel) / n
            mean = sel.mean(axis=0)
            mu0[r, j], mu1[r, j] = mean
            dv = sel - mean
            a[r, j] = (dv[:, 0] ** 2).mean()
            b[r, j] = (dv[:, 0] * dv[:, 1]).mean()
            c[r, j] = (dv[:, 1] ** 2).mean()
    w /= w.sum(axis=1, keepdims=True)
    a, b, c, lmin = _floor_abc(a, b, c, floor)
    live = list(range(restarts))
    traces: list[list[float]] = [[] for _ in range(restarts)]
    steps = np.zeros(restarts, dtype=int)
    prev = np.full(restarts, -np.inf)
    finished: dict[int, tuple] = {}
    ll_shift = -n * 2.0 * np.log(scale)  # converts z-space LL to data units
    ones_k = np.ones(k)
    lj_buf = np.empty(n * restarts * k)
    norm_buf = np.empty(n * restarts)
    shift = None  # running exp-shift; folded into the constant coefficient

    def build_coef(base, inv_a, inv_b, inv_c, extra):
        """Quadratic-polynomial coefficients of the log-joint, (6, r_n*k).

        The constant term folds in the mean quadratic form via the linear
        coefficients: mu' Sigma^-1 mu = mu0*c1 + mu1*c2.
        """
        coef = np.empty((6, inv_a.size))
        shape = inv_a.shape
        c1 = coef[1].reshape(shape)
        c2 = coef[2].reshape(shape)
        np.multiply(inv_a, mu0, out=c1)
        c1 += inv_b * mu1
        np.multiply(inv_b, mu0, out=c2)
        c2 += inv_c * mu1
        c0 = coef[0].reshape(shape)
        np.multiply(c1, mu0, out=c0)
        c0 += c2 * mu1
        c0 *= -0.5
        c0 += base
        c0 += extra
        np.multiply(inv_a, -0.5, out=coef[3].reshape(shape))
        np.negative(inv_b, out=coef[4].reshape(shape))
        np.multiply(inv_c, -0.5, out=coef[5].reshape(shape))
        return coef

    def raw_log_joint(out, fast, base, inv_a, inv_b, inv_c, extra=0.0):
        """Fill `out` (n, r_n*k) with the unshifted log-joint (+ extra)."""
        if fast:
            np.matmul(g_mat, build_coef(base, inv_a, inv_b, inv_c, extra),
                      out=out)
        else:
            dx = z0[:, None, None] - mu0[None]
            dy = z1[:, None, None] - mu1[None]
            quad = inv_a * dx * dx + 2.0 * inv_b * dx * dy + inv_c * dy * dy
            np.copyto(out, ((base + extra) - 0.5 * quad).reshape(out.shape))

    while live:
        r_n = len(live)
        lj = lj_buf[:n * r_n * k].reshape(n, r_n * k)
        det = a * c - b * b
        q = 1.0 / det
        inv_a = c * q
        inv_b = b * q
        np.negative(inv_b, out=inv_b)
        inv_c = a * q
        base = np.log(w * np.sqrt(q)) - _LOG_2PI
        fast = bool((lmin > 100.0 * floor).all())
        # exp-shift strategy: reuse last iteration's scalar shift (folded into
        # the constant term, saving a pass), refresh it if the norms leave a
        # safe range, and as a last resort shift per point.
        mx = None
        for attempt in range(3):
            if attempt == 0 and shift is not None:
                raw_log_joint(lj, fast, base, inv_a, inv_b, inv_c, -shift)
            elif attempt <= 1:
                raw_log_joint(lj, fast, base, inv_a, inv_b, inv_c)
                shift = float(lj.max())
                lj -= shift
            else:
                raw_log_joint(lj, fast, base, inv_a, inv_b, inv_c)
                mx = lj.reshape(n, r_n, k).max(axis=2)
                np.subtract(lj.reshape(n, r_n, k), mx[:, :, None],
                            out=lj.reshape(n, r_n, k))
                shift = None
            np.exp(lj, out=lj)
            norm = norm_buf[:n * r_n].reshape(n, r_n)
            np.matmul(lj.reshape(n * r_n, k), ones_k,
                      out=norm_buf[:n * r_n])
            nmin, nmax = float(norm.min()), float(norm.max())
            if mx is not None or (1e-280 < nmin and nmax < 1e280):
                break
            shift = None
        resp = lj.reshape(n, r_n, k)
        np.divide(resp, norm[:, :, None], out=resp)
        point_ll = np.log(norm, out=norm)
        point_ll += shift if mx is None else mx
        ll_live = point_ll.sum(axis=0) + ll_shift  # (r_n,)

        done_rows = []
        for row, r in enumerate(live):
            ll_r = float(ll_live[row])
            traces[r].append(ll_r)
            if (abs(ll_r - prev[r]) <= tol * max(abs(ll_r), 1.0)
                    or steps[r] >= max_iter):
                finished[r] = (w[row].copy(), mu0[row].copy(), mu1[row].copy(),
                               a[row].copy(), b[row].copy(), c[row].copy())
                done_rows.append(row)
            else:
                prev[r] = ll_r

        if done_rows:
            keep = [row for row in range(r_n) if row not in done_rows]
            live = [live[row] for row in keep]
            if not live:
                break
            mu0, mu1, w = mu0[keep], mu1[keep], w[keep]
            a, b, c, lmin = a[keep], b[keep], c[keep], lmin[keep]
            resp = np.ascontiguousarray(resp[:, keep])
            lj_buf = resp.reshape(-1)
            r_n = len(live)

        moments = (resp.reshape(n, r_n * k).T @ g_mat).reshape(r_n, k, 6)
        nk = moments[:, :, 0]
        # A component whose responsibility mass underflowed keeps its previous
        # parameters at (numerically) zero weight: with all-zero
        # responsibilities any parameter choice maximizes its M-step term, so
        # freezing preserves EM's monotone log-likelihood exactly.
        dead = nk <= 1e-12
        any_dead = bool(dead.any())
        old = (mu0, mu1, a, b, c, lmin) if any_dead else None
        if any_dead:
            nk = np.where(dead, 1.0, nk)
            w = np.where(dead, 1e-300, nk / n)
        else:
            w = nk / n
        mu0 = moments[:, :, 1] / nk
        mu1 = moments[:, :, 2] / nk
        a, b, c, lmin = _floor_abc(
            moments[:, :, 3] / nk - mu0 * mu0,
            moments[:, :, 4] / nk - mu0 * mu1,
            moments[:, :, 5] / nk - mu1 * mu1, floor)
        if old is not None:
            for cur_arr, old_arr in zip((mu0, mu1, a, b, c, lmin), old):
                cur_arr[dead] = old_arr[dead]
        steps[live] += 1

    models = []
    for r in range(restarts):
        wr, m0, m1, ar, br, cr = finished[r]
        means = np.stack([center[0] + scale * m0, center[1] + scale * m1], axis=1)
        covs = np.empty((k, 2, 2))
        covs[:, 0, 0] = ar * scale**2
        covs[:, 0, 1] = covs[:, 1, 0] = br * scale**2
        covs[:, 1, 1] = cr * scale**2
        models.append(GmmModel(weights=wr, means=means, covariances=covs,
                               ll_trace=traces[r]))
    return _best_model(models)


def _fit_gmm_general(x: np.ndarray, k: int, seed: int, restarts: int,
                     max_iter: int, tol: float, ridge: float) -> GmmModel:
    n, d = x.shape
    base = _floor_spd(np.cov(x, rowvar=False, bias=True).reshape(d, d), ridge)
    models = []
    for means0 in _init_means(x, k, seed, restarts):
        # start from the k-means++ hard partition's weights, means, covariances
        labels = ((x[:, None, :] - means0[None]) ** 2).sum(axis=2).argmin(axis=1)
        weights0 = np.empty(k)
        covs0 = np.empty((k, d, d))
        means_init = means0.copy()
        for j in range(k):
            sel = x[labels == j]
            if len(sel) == 0:  # duplicate seed centers can leave one empty
                weights0[j] = 1.0 / n
                covs0[j] = base
                continue
            weights0[j] = len(sel) / n
            means_init[j] = sel.mean(axis=0)
            dv = sel - means_init[j]
            covs0[j] = (dv.T @ dv) / len(sel)
        weights0 /= weights0.sum()
        model = GmmModel(weights=weights0, means=means_init,
                         covariances=_floor_spd(covs0, ridge))
        prev = -np.inf
        for _ in range(max_iter + 1):
            lj = model._log_joint(x)
            mx = lj.max(axis=1, keepdims=True)
            e = np.exp(lj - mx)
            norm = e.sum(axis=1, keepdims=True)
            ll = float((mx[:, 0] + np.log(norm[:, 0])).sum())
            model.ll_trace.append(ll)
            if abs(ll - prev) <= tol * max(abs(ll), 1.0):
                break
            prev = ll
            resp = e / norm
            nk = resp.sum(axis=0)
            # zero-mass components keep their previous parameters (any value
            # maximizes their M-step term), preserving monotone likelihood
            dead = nk <= 1e-12
            nk_safe = np.where(dead, 1.0, nk)
            weights = np.where(dead, 1e-300, nk / n)
            means = (resp.T @ x) / nk_safe[:, None]
            diff = x[None, :, :] - means[:, None, :]
            covs = np.einsum("nk,knd,kne->kde", resp, diff, diff) / nk_safe[:, None, None]
            covs = _floor_spd(covs, ridge)
            if dead.any():
                means[dead] = model.means[dead]
                covs[dead] = model.covariances[dead]
            model.weights = weights
            model.means = means
            model.covariances = covs
        models.append(model)
    return _best_model(models)


def free_parameter_count(k: int, d: int) -> int:
    """Mixture weights (K-1) + means (K*d) + symmetric covariances."""
    return (k - 1) + k * d + k * (d * (d + 1) // 2)


def bic_from_loglik(loglik: float, k_free: int, m: int) -> float:
    return -2.0 * loglik + k_free * float(np.log(m))


def bic(model: GmmModel, points2d: np.ndarray) -> float:
    pts = np.asarray(points2d, dtype=np.float64)
    return bic_from_loglik(model.loglik(pts),
                           free_parameter_count(model.k, model.dim), len(pts))


def _argmin_bic(table: Sequence[tuple[int, float]]) -> int:
    """Smallest-BIC K; exact ties resolve to the smaller K."""
    best_k, best_bic = table[0]
    for k, b in table[1:]:
        if b < best_bic:
            best_k, best_bic = k, b
    return best_k


def select_k(points2d: np.ndarray, k_range: Iterable[int] = range(2, 16),
             seed: int = 0, **fit_kwargs) -> tuple[int, GmmModel, list[tuple[int, float]]]:
    """Fit a mixture per candidate K and keep the BIC minimizer.

    Candidates larger than the number of points are skipped (small folds).
    """
    pts = np.asarray(points2d, dtype=np.float64)
    ks = [k for k in k_range if 1 <= k <= len(pts)]
    if not ks:
        raise InputError(
            f"select_k: no candidate K in range fits {len(pts)} points")
    table: list[tuple[int, float]] = []
    models: dict[int, GmmModel] = {}
    for k in ks:
        models[k] = fit_gmm(pts, k, seed=seed, **fit_kwargs)
        table.append((k, bic(models[k], pts)))
    kstar = _argmin_bic(table)
    return kstar, models[kstar], table


# -- assignment -------------------------------------------------------------------


@dataclass
class DomainAssignment:
    labels: np.ndarray  # (n,) pseudo-domain index per source sample
    counts: np.ndarray  # (K,) samples per pseudo-domain

    def indices_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def assign_pseudo_domains(model: GmmModel, source_points: np.ndarray) -> DomainAssignment:
    """Hard-assign each source point to its argmax-responsibility component
    (ties resolve to the lower component index)."""
    resp = model.responsibilities(np.asarray(source_points, dtype=np.float64))
    labels = resp.argmax(axis=1)
    counts = np.bincount(labels, minlength=model.k)
    return DomainAssignment(labels=labels, counts=counts)


# -- fold-level pipeline ------------------------------------------------------------


@dataclass
class Stage2Config:
    k_min: int = 2
    k_max: int = 15
    cluster_space: str = "pca2"  # or "full": GMM in R^{2C}, centers projected
    restarts: int = 5
    max_iter: int = 500
    tol: float = 1e-6
    ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.cluster_space not in ("pca2", "full"):
            raise InputError(
                f"cluster_space must be 'pca2' or 'full', got {self.cluster_space!r}")
        if not 1 <= self.k_min <= self.k_max:
            raise InputError(f"bad K range [{self.k_min}, {self.k_max}]")


@dataclass
class Stage2Result:
    coords: np.ndarray            # (n_source + n_target, 2C) stats
    pca: PcaModel
    source_points2d: np.ndarray
    target_points2d: np.ndarray
    kstar: int
    model: GmmModel
    assignment: DomainAssignment  # over source samples only
    bic_table: list[tuple[int, float]]
    centers2d: np.ndarray         # (K, 2) cluster centers in PCA space


def run_stage2(net: Network, source_x: np.ndarray, target_x: np.ndarray,
               cfg: Stage2Config) -> Stage2Result:
    """Discover pseudo sub-source domains for one fold.

    The mixture is fitted on source and target statistics together; pseudo
    labels are assigned to source samples only.
    """
    n_src = len(source_x)
    maps = extract_feature_maps(net, np.concatenate([source_x, target_x]))
    coords = stats_from_maps(maps)
    pca = fit_pca(coords)
    pts2d = pca.transform(coords)
    fit_points = coords if cfg.cluster_space == "full" else pts2d
    kstar, model, table = select_k(
        fit_points, k_range=range(cfg.k_min, cfg.k_max + 1), seed=cfg.seed,
        restarts=cfg.restarts, max_iter=cfg.max_iter, tol=cfg.tol, ridge=cfg.ridge)
    assignment = assign_pseudo_domains(model, fit_points[:n_src])
    centers2d = model.means if cfg.cluster_space == "pca2" \
        else pca.transform(model.means)
    return Stage2Result(coords=coords, pca=pca, source_points2d=pts2d[:n_src],
                        target_points2d=pts2d[n_src:], kstar=kstar, model=model,
                        assignment=assignment, bic_table=table, centers2d=centers2d)


# -- artifact writers ----------------------------------------------------------------


def write_stats_csv(path: str | Path, sample_ids: Sequence[str],
                    coords: np.ndarray, points2d: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    half = coords.shape[1] // 2
    header = (["sample_id"] + [f"mu{c}" for c in range(half)]
              + [f"sigma{c}" for c in range(half)] + ["pc0", "pc1"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for sid, row, z in zip(sample_ids, coords, points2d):
            w.writerow([sid] + [repr(float(v)) for v in row]
                       + [repr(float(v)) for v in z])


def write_clusters_json(path: str | Path, result: Stage2Result) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "k_star": result.kstar,
        "weights": result.model.weights.tolist(),
        "means": result.model.means.tolist(),
        "covariances": result.model.covariances.tolist(),
        "centers2d": result.centers2d.tolist(),
        "log_likelihood": result.model.ll_trace[-1],
        "bic_table": [{"k": k, "bic": b} for k, b in result.bic_table],
        "pca_degenerate": result.pca.degenerate,
        "fitted_on": "source+target",
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_assignments_csv(path: str | Path, sample_ids: Sequence[str],
                          labels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "pseudo_domain"])
        for sid, lab in zip(sample_ids, labels):
            w.writerow([sid, int(lab)])
