"""Spectral clustering of overlap matrices plus mean-overlap noise removal.

The pipeline is the symmetric-normalized-Laplacian variant: build
L = I - D^(-1/2) W D^(-1/2), take eigenvectors of the k smallest eigenvalues
(cyclic Jacobi solver), row-normalize, and run seeded k-means++ / Lloyd in
that space.  Everything is deterministic for a fixed seed: same matrix and
parameters give bit-identical groupings on any IEEE-754 platform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence
from .overlap import OverlapMatrix


class DegenerateInput(UserWarning):
    """Fewer images than requested clusters; singleton groups returned."""


class EmptiedGroup(UserWarning):
    """Noise removal left a group without members."""


@dataclass(frozen=True)
class SpectralParams:
    """Knobs for one spectral clustering run; ``k`` comes from room counts."""

    k: int
    seed: int = 0
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-9
    jacobi_tol: float = 1e-10
    jacobi_max_sweeps: int = 100
    degree_epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if min(self.kmeans_tol, self.jacobi_tol, self.degree_epsilon) <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class Grouping:
    """A partition of image ids into exactly k groups plus an unassigned bucket."""

    groups: list[list[str]]
    unassigned: list[str] = field(default_factory=list)

    def all_ids(self) -> list[str]:
        out = [i for g in self.groups for i in g]
        out.extend(self.unassigned)
        return out


def normalized_laplacian(W: OverlapMatrix, eps: float = 1e-12) -> np.ndarray:
    """Symmetric normalized Laplacian I - D^(-1/2) W D^(-1/2).

    Degrees below ``eps`` are clamped so isolated rows cannot divide by zero.
    The scale matrix is formed first so the result is exactly symmetric in
    floating point.
    """
    A = W.scores
    degrees = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, eps))
    scale = inv_sqrt[:, None] * inv_sqrt[None, :]
    return np.eye(W.n) - A * scale


def jacobi_eigen(
    S: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted ascending and the matching orthonormal
    eigenvector columns.  Convergence is relative: the off-diagonal Frobenius
    norm must drop below ``tol`` times the Frobenius norm of ``S``.
    """
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix must have finite entries")
    if not np.array_equal(A, A.T):
        raise ValueError("matrix must be symmetric")
    V = np.eye(n)
    fnorm = np.sqrt((A * A).sum())
    if n < 2 or fnorm == 0.0:
        order = np.argsort(np.diag(A), kind="stable")
        return np.diag(A)[order], V[:, order]
    threshold = tol * fnorm
    idx = np.arange(n)

    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.triu(A, 1) ** 2).sum())
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)

                A[p, p] -= t * apq
                A[q, q] += t * apq
                A[p, q] = A[q, p] = 0.0
                mask = (idx != p) & (idx != q)
                aip = A[mask, p].copy()
                aiq = A[mask, q].copy()
                A[mask, p] = A[p, mask] = aip - s * (aiq + tau * aip)
                A[mask, q] = A[q, mask] = aiq + s * (aip - tau * aiq)

                vip = V[:, p].copy()
                viq = V[:, q].copy()
                V[:, p] = vip - s * (viq + tau * vip)
                V[:, q] = viq + s * (vip - tau * viq)
    else:
        off = np.sqrt(2.0 * (np.triu(A, 1) ** 2).sum())
        if off > threshold:
            raise NoConvergence(
                f"jacobi solver: off-diagonal norm {off:.3e} above {threshold:.3e} "
                f"after {max_sweeps} sweeps"
            )

    eigenvalues = np.diag(A).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], V[:, order]


def _canonical_signs(U: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the largest-magnitude entry is positive.

    Removes the sign ambiguity of eigenvectors, which keeps the spectral
    embedding equivariant under permutations of the input ids.
    """
    U = U.copy()
    for j in range(U.shape[1]):
        pivot = int(np.argmax(np.abs(U[:, j])))
        if U[pivot, j] < 0.0:
            U[:, j] = -U[:, j]
    return U


def spectral_embed(W: OverlapMatrix, params: SpectralParams) -> np.ndarray:
    """Rows are the unit-normalized spectral coordinates of each image.

    Columns come from the eigenvectors of the k smallest Laplacian
    eigenvalues; all-zero rows map to the first unit vector.
    """
    if W.n < params.k:
        raise ValueError(f"need at least k={params.k} images, got {W.n}")
    L = normalized_laplacian(W, params.degree_epsilon)
    _, vectors = jacobi_eigen(L, params.jacobi_tol, params.jacobi_max_sweeps)
    U = _canonical_signs(vectors[:, : params.k])
    norms = np.sqrt((U * U).sum(axis=1))
    out = np.empty_like(U)
    for i in range(U.shape[0]):
        if norms[i] == 0.0:
            out[i, :] = 0.0
            out[i, 0] = 1.0
        else:
            out[i, :] = U[i, :] / norms[i]
    return out


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-9,
) -> np.ndarray:
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Nearest-centroid ties break toward the lowest centroid index; an empty
    cluster is repaired by reassigning the point farthest from its centroid.
    Deterministic for a fixed seed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if k == 1:
        return np.zeros(n, dtype=np.int64)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)

        counts = np.bincount(labels, minlength=k)
        taken: set[int] = set()
        for j in np.flatnonzero(counts == 0):
            per_point = dist[np.arange(n), labels].copy()
            if taken:
                per_point[list(taken)] = -1.0
            farthest = int(np.argmax(per_point))
            labels[farthest] = j
            taken.add(farthest)

        new_centers = np.empty_like(centers)
        for j in range(k):
            members = points[labels == j]
            new_centers[j] = members.mean(axis=0) if members.size else centers[j]
        shift = np.sqrt(((new_centers - centers) ** 2).sum())
        centers = new_centers
        if shift <= tol:
            break
    return labels


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: sample several candidates per step, keep the one
    that minimizes the resulting potential."""
    n = points.shape[0]
    n_candidates = 2 + int(np.log(k))
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            centers[c] = points[int(rng.integers(n))]
            continue
        draws = rng.random(n_candidates) * total
        cumulative = np.cumsum(d2)
        candidates = np.searchsorted(cumulative, draws, side="right")
        candidates = np.minimum(candidates, n - 1)
        best_d2 = None
        best_pot = np.inf
        best_idx = int(candidates[0])
        for cand in candidates:
            cand_d2 = np.minimum(d2, ((points - points[int(cand)]) ** 2).sum(axis=1))
            pot = float(cand_d2.sum())
            if pot < best_pot:
                best_pot = pot
                best_d2 = cand_d2
                best_idx = int(cand)
        centers[c] = points[best_idx]
        d2 = best_d2
    return centers


def spectral_cluster(W: OverlapMatrix, params: SpectralParams) -> Grouping:
    """Group a room type's images into k room spaces.

    If there are fewer images than k, returns one singleton group per image
    plus empty groups (with a :class:`DegenerateInput` warning).  Groups are
    ordered by the position of their first member in the matrix id order;
    the unassigned bucket is empty at this stage.
    """
    n = W.n
    k = params.k
    if n < k:
        warnings.warn(
            f"only {n} images for k={k}: returning singletons and empty groups",
            DegenerateInput,
            stacklevel=2,
        )
        groups = [[i] for i in W.ids] + [[] for _ in range(k - n)]
        return Grouping(groups=groups, unassigned=[])

    embedding = spectral_embed(W, params)
    # Cluster rows in a canonical (value-sorted) order so the resulting
    # partition does not depend on the order ids arrived in.
    order = np.lexsort(embedding.T[::-1])
    sorted_labels = kmeans(
        embedding[order], k, params.seed, params.kmeans_max_iters, params.kmeans_tol
    )
    labels = np.empty(n, dtype=np.int64)
    labels[order] = sorted_labels

    by_label: dict[int, list[str]] = {}
    for i, image_id in enumerate(W.ids):
        by_label.setdefault(int(labels[i]), []).append(image_id)
    # Order groups by first-member appearance; pad with empty groups.
    member_groups = sorted(by_label.values(), key=lambda g: W.ids.index(g[0]))
    groups = member_groups + [[] for _ in range(k - len(member_groups))]
    return Grouping(groups=groups, unassigned=[])


def remove_noise(g: Grouping, W: OverlapMatrix, tau: float) -> Grouping:
    """Prune outliers: drop members whose mean overlap with the rest of their
    group falls below ``tau`` times the group's best mean.

    Runs as a single pass per group; singleton and empty groups are left
    untouched and the group count never changes.  Pruned ids move to the
    unassigned bucket, so no image is ever dropped.
    """
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must be in (0, 1]")
    new_groups: list[list[str]] = []
    moved: list[str] = []
    for group in g.groups:
        if len(group) < 2:
            new_groups.append(list(group))
            continue
        indices = [W.index_of(i) for i in group]
        means = []
        for i in indices:
            others = [j for j in indices if j != i]
            means.append(float(np.mean([W.scores[i, j] for j in others])))
        best = max(means)
        threshold = tau * best
        kept = [image_id for image_id, m in zip(group, means) if m >= threshold]
        dropped = [image_id for image_id, m in zip(group, means) if m < threshold]
        if not kept:
            warnings.warn("noise removal emptied a group", EmptiedGroup, stacklevel=2)
        new_groups.append(kept)
        moved.extend(dropped)
    return Grouping(groups=new_groups, unassigned=list(g.unassigned) + moved)
