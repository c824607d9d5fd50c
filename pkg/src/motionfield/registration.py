"""Rigid registration of corresponded point clouds (Kabsch + RANSAC).

The predicted motion field gives, for every object pixel, a current 3D
point and a displaced 3D point with index-wise correspondence, so the
rigid transform between them has a closed-form least-squares solution.
The 3x3 decomposition is self-contained: a cyclic Jacobi eigensolver on
the symmetric square of the cross-covariance with a determinant sign fix,
vectorized over RANSAC hypothesis batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .camera import PinholeIntrinsics, pixel_grid, unproject
from .errors import DegenerateFitError, GeometryError, RansacFailedError
from .transforms import RigidTransform

_RANK_TOL = 1e-8  # sigma_2 / sigma_1 below this counts as collinear


@dataclass
class CorrespondentClouds:
    """Two (N, 3) clouds with index-wise correspondence and optional weights."""

    p0: np.ndarray
    p1: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64).reshape(-1, 3)
        self.p1 = np.asarray(self.p1, dtype=np.float64).reshape(-1, 3)
        if self.p0.shape != self.p1.shape:
            raise GeometryError("corresponded clouds must have equal shapes")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if self.weights.shape[0] != self.p0.shape[0]:
                raise GeometryError("weights length must match cloud size")
            if np.any(self.weights < 0):
                raise GeometryError("weights must be non-negative")

    def __len__(self) -> int:
        return self.p0.shape[0]


@numba.njit(cache=True)
def _jacobi3_kernel(A, vals, vecs, sweeps):
    n = A.shape[0]
    for b in range(n):
        a = A[b]
        v = vecs[b]
        for i in range(3):
            for j in range(3):
                v[i, j] = 1.0 if i == j else 0.0
        scale = 0.0
        for i in range(3):
            for j in range(3):
                scale = max(scale, abs(a[i, j]))
        tol = 1e-15 * scale
        for _ in range(sweeps):
            off = abs(a[0, 1]) + abs(a[0, 2]) + abs(a[1, 2])
            if off <= tol:
                break
            for p in range(2):
                for q in range(p + 1, 3):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = t * c
                    for k in range(3):
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[k, q] = s * akp + c * akq
                    for k in range(3):
                        apk = a[p, k]
                        aqk = a[q, k]
                        a[p, k] = c * apk - s * aqk
                        a[q, k] = s * apk + c * aqk
                    for k in range(3):
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = c * vkp - s * vkq
                        v[k, q] = s * vkp + c * vkq
        # sort eigenvalues descending (3-element insertion sort, stable)
        for i in range(3):
            vals[b, i] = a[i, i]
        for i in range(1, 3):
            key = vals[b, i]
            k0 = v[0, i]
            k1 = v[1, i]
            k2 = v[2, i]
            j = i - 1
            while j >= 0 and vals[b, j] < key:
                vals[b, j + 1] = vals[b, j]
                v[0, j + 1] = v[0, j]
                v[1, j + 1] = v[1, j]
                v[2, j + 1] = v[2, j]
                j -= 1
            vals[b, j + 1] = key
            v[0, j + 1] = k0
            v[1, j + 1] = k1
            v[2, j + 1] = k2


def jacobi_eigh_sym3(S: np.ndarray, sweeps: int = 12):
    """Eigendecomposition of batched symmetric 3x3 matrices by cyclic Jacobi.

    Returns (eigvals, eigvecs) with eigenvalues sorted descending and
    eigenvectors in the columns. S has shape (..., 3, 3).
    """
    S = np.asarray(S, dtype=np.float64)
    batch = S.shape[:-2]
    A = np.ascontiguousarray(S.reshape(-1, 3, 3)).copy()
    n = A.shape[0]
    vals = np.empty((n, 3), dtype=np.float64)
    vecs = np.empty((n, 3, 3), dtype=np.float64)
    _jacobi3_kernel(A, vals, vecs, sweeps)
    return vals.reshape(*batch, 3), vecs.reshape(*batch, 3, 3)


def _kabsch_batched(p0: np.ndarray, p1: np.ndarray, weights: Optional[np.ndarray] = None):
    """Rigid fit for batches of corresponded clouds, shape (B, N, 3).

    Returns (R (B,3,3), t (B,3), ok (B,) bool). `ok` is False where the
    configuration is rank-deficient (collinear/coincident points).
    """
    if weights is None:
        c0 = p0.mean(axis=1)
        c1 = p1.mean(axis=1)
        q0 = p0 - c0[:, None, :]
        q1 = p1 - c1[:, None, :]
        H = np.matmul(q0.transpose(0, 2, 1), q1)
    else:
        wsum = weights.sum(axis=1, keepdims=True)
        wn = weights / np.maximum(wsum, 1e-300)
        c0 = np.einsum("bn,bni->bi", wn, p0)
        c1 = np.einsum("bn,bni->bi", wn, p1)
        q0 = p0 - c0[:, None, :]
        q1 = p1 - c1[:, None, :]
        H = np.einsum("bn,bni,bnj->bij", wn, q0, q1)

    # singular vectors of H from the symmetric square H^T H
    vals, V = jacobi_eigh_sym3(np.einsum("bki,bkj->bij", H, H))
    sig = np.sqrt(np.maximum(vals, 0.0))
    ok = sig[:, 1] > _RANK_TOL * np.maximum(sig[:, 0], 1e-300)

    # left singular vectors; the third is completed by a cross product so
    # det(U) = +1 and the sign fix reduces to det(V)
    safe = np.maximum(sig, 1e-300)
    u0 = np.einsum("bij,bj->bi", H, V[:, :, 0]) / safe[:, 0:1]
    u1 = np.einsum("bij,bj->bi", H, V[:, :, 1]) / safe[:, 1:2]
    # re-orthonormalize to keep R orthonormal to ~1e-12 under roundoff
    u0 /= np.maximum(np.linalg.norm(u0, axis=1, keepdims=True), 1e-300)
    u1 -= np.sum(u0 * u1, axis=1, keepdims=True) * u0
    u1 /= np.maximum(np.linalg.norm(u1, axis=1, keepdims=True), 1e-300)
    u2 = np.cross(u0, u1)
    U = np.stack([u0, u1, u2], axis=-1)

    detV = np.linalg.det(V)
    D = np.broadcast_to(np.eye(3), U.shape).copy()
    D[:, 2, 2] = np.sign(detV)
    # transform maps p0 -> p1: R = V_of_H' ... here R = (U D V^T)^T = V D U^T
    R = np.einsum("bij,bjk,blk->bil", V, D, U)
    t = c1 - np.einsum("bij,bj->bi", R, c0)
    return R, t, ok


def kabsch(clouds: CorrespondentClouds):
    """Closed-form least-squares rigid transform between corresponded clouds.

    Returns (RigidTransform, residual_rms). Raises DegenerateFitError for
    fewer than 3 points or a collinear/coincident configuration.
    """
    n = len(clouds)
    if n < 3:
        raise DegenerateFitError(f"need at least 3 correspondences, got {n}")
    w = None if clouds.weights is None else clouds.weights[None, :]
    R, t, ok = _kabsch_batched(clouds.p0[None], clouds.p1[None], w)
    if not ok[0]:
        raise DegenerateFitError("point configuration is collinear or coincident")
    T = RigidTransform(R[0], t[0])
    res = T.apply(clouds.p0) - clouds.p1
    if clouds.weights is None:
        rms = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
    else:
        wn = clouds.weights / max(clouds.weights.sum(), 1e-300)
        rms = float(np.sqrt(np.sum(wn * np.sum(res * res, axis=1))))
    return T, rms


@dataclass
class RansacConfig:
    iters: int = 100
    inlier_thresh: float = 0.005  # meters; matches the perturbation floor of the noise table
    min_sample: int = 3
    seed: int = 0


def _sample_triples(rng, iters, n, k):
    """(iters, k) index sets without replacement, by redraw on collision."""
    picks = rng.integers(0, n, size=(iters, k))
    for _ in range(16):
        bad = np.zeros(iters, dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                bad |= picks[:, a] == picks[:, b]
        if not bad.any():
            break
        picks[bad] = rng.integers(0, n, size=(int(bad.sum()), k))
    return picks


@numba.njit(cache=True)
def _score_counts(R, t, p0, p1, thresh2, counts):
    B = R.shape[0]
    n = p0.shape[0]
    for b in range(B):
        r = R[b]
        tb = t[b]
        c = 0
        for i in range(n):
            x, y, z = p0[i, 0], p0[i, 1], p0[i, 2]
            ex = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + tb[0] - p1[i, 0]
            ey = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + tb[1] - p1[i, 1]
            ez = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + tb[2] - p1[i, 2]
            if ex * ex + ey * ey + ez * ez < thresh2:
                c += 1
        counts[b] = c


@numba.njit(cache=True)
def _score_mask(R, t, p0, p1, thresh2, out):
    n = p0.shape[0]
    for i in range(n):
        x, y, z = p0[i, 0], p0[i, 1], p0[i, 2]
        ex = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0] - p1[i, 0]
        ey = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1] - p1[i, 1]
        ez = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2] - p1[i, 2]
        out[i] = ex * ex + ey * ey + ez * ez < thresh2


def _inlier_counts(R, t, p0, p1, thresh):
    counts = np.empty(R.shape[0], dtype=np.int64)
    _score_counts(R, t, np.ascontiguousarray(p0), np.ascontiguousarray(p1),
                  thresh * thresh, counts)
    return counts


def _inlier_mask_one(R, t, p0, p1, thresh):
    out = np.empty(p0.shape[0], dtype=np.bool_)
    _score_mask(R, t, np.ascontiguousarray(p0), np.ascontiguousarray(p1),
                thresh * thresh, out)
    return out


def ransac_rigid(clouds: CorrespondentClouds, cfg: RansacConfig = RansacConfig()):
    """Robust rigid fit: best-consensus Kabsch hypothesis refit on its inliers.

    Hypotheses are pre-ranked on a strided subset of points and the leaders
    re-scored on the full cloud, which keeps large problems inside the
    latency budget of the control loop. Returns (RigidTransform,
    inlier_mask). Raises RansacFailedError when no hypothesis gathers >= 3
    inliers; callers may fall back to plain kabsch.
    """
    n = len(clouds)
    if n < cfg.min_sample:
        raise DegenerateFitError(f"need at least {cfg.min_sample} points, got {n}")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    picks = _sample_triples(rng, cfg.iters, n, cfg.min_sample)
    R, t, ok = _kabsch_batched(clouds.p0[picks], clouds.p1[picks])
    p0 = np.ascontiguousarray(clouds.p0)
    p1 = np.ascontiguousarray(clouds.p1)

    subset_cap = 512
    if n > subset_cap:
        stride = (n + subset_cap - 1) // subset_cap
        sub = np.arange(0, n, stride)
        pre = _inlier_counts(R, t, p0[sub], p1[sub], cfg.inlier_thresh)
        pre = np.where(ok, pre, -1)
        k = min(8, cfg.iters)
        finalists = np.argpartition(-pre, k - 1)[:k]
        finalists = finalists[np.argsort(finalists)]  # deterministic tie order
        counts = _inlier_counts(R[finalists], t[finalists], p0, p1, cfg.inlier_thresh)
        counts = np.where(ok[finalists], counts, -1)
        best = int(finalists[np.argmax(counts)])
        best_count = int(counts.max())
    else:
        counts = _inlier_counts(R, t, p0, p1, cfg.inlier_thresh)
        counts = np.where(ok, counts, -1)
        best = int(np.argmax(counts))  # ties resolve to the lowest iteration index
        best_count = int(counts[best])

    if best_count < cfg.min_sample:
        raise RansacFailedError("no hypothesis reached 3 inliers")
    best_mask = _inlier_mask_one(R[best], t[best], p0, p1, cfg.inlier_thresh)
    T, _ = kabsch(CorrespondentClouds(p0[best_mask], p1[best_mask]))
    return T, best_mask


def field_to_clouds(field, mask, K: PinholeIntrinsics) -> CorrespondentClouds:
    """Unproject a motion field into corresponded clouds over the mask.

    `field` is (H, W, 4): depth plus camera-frame 3D displacement. P0 is the
    unprojected pixel at its depth; P1 = P0 + motion.
    """
    field = np.asarray(field, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if not m.any():
        raise GeometryError("empty mask: no pixels to unproject")
    grid = pixel_grid(K)
    depth = field[..., 0]
    valid = m & (depth > 0)
    if not valid.any():
        raise GeometryError("no masked pixels with positive depth")
    p0 = unproject(grid[valid], depth[valid], K)
    p1 = p0 + field[..., 1:4][valid]
    return CorrespondentClouds(p0, p1)


def to_base_frame(T_o: RigidTransform, T_bc: RigidTransform) -> RigidTransform:
    """Re-express a camera-frame object motion in the robot base frame.

    T_a = T_bc o T_o o T_bc^-1, where T_bc is the camera pose in the base.
    """
    return T_bc.compose(T_o).compose(T_bc.inverse())


def pose_errors(T_est: RigidTransform, T_gt: RigidTransform):
    """(translation MSE in m^2, Frobenius norm of the rotation difference).

    Translation MSE is the mean of the 3 squared component errors, so the
    numbers are comparable across runs regardless of vector length
    conventions.
    """
    dt = T_est.t - T_gt.t
    t_mse = float(np.mean(dt * dt))
    r_fnorm = float(np.linalg.norm(T_est.R - T_gt.R, ord="fro"))
    return t_mse, r_fnorm
