"""Unsupervised scar-delineation baselines on the atrial wall shell.

Three comparators operating on the 1-D intensity distribution of wall-shell
voxels: n-SD thresholding (population std, strict inequality), k-means with
k-means++ seeding and restarts, and fuzzy c-means (m = 2).  All are pure
functions of their inputs and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phantom import boundary_shell

DEFAULT_WALL_RADIUS = 2


@dataclass(frozen=True)
class WallRegion:
    """Binary wall-shell mask plus the radius it was derived with."""

    mask: np.ndarray
    radius: float


@dataclass(frozen=True)
class BaselineResult:
    scar: np.ndarray  # boolean mask, always a subset of the wall region
    flags: tuple[str, ...] = ()


def wall_region(la_pv, radius: float = DEFAULT_WALL_RADIUS) -> WallRegion:
    """Symmetric shell of voxels within `radius` of the LA/PV mask boundary."""
    la_pv = np.asarray(la_pv, dtype=bool)
    if not la_pv.any():
        raise ValueError("wall_region: empty LA/PV mask")
    return WallRegion(mask=boundary_shell(la_pv, radius), radius=radius)


def _wall_mask(wall) -> np.ndarray:
    mask = wall.mask if isinstance(wall, WallRegion) else np.asarray(wall, dtype=bool)
    if not mask.any():
        raise ValueError("empty wall region")
    return mask


def sd_threshold(intensities, wall, n_sd: float = 2.0) -> BaselineResult:
    """Scar = wall voxels with intensity strictly above mean + n_sd * std.

    Mean and standard deviation (population, not sample) are computed over
    wall voxels only.
    """
    mask = _wall_mask(wall)
    intensities = np.asarray(intensities, dtype=np.float64)
    values = intensities[mask]
    std = float(values.std(ddof=0))
    flags: tuple[str, ...] = ()
    if std == 0.0:
        flags = ("constant_wall_intensities",)
    threshold = float(values.mean()) + n_sd * std
    scar = mask & (intensities > threshold)
    if std == 0.0:
        scar = np.zeros_like(mask)
    return BaselineResult(scar=scar, flags=flags)


def _kmeans_pp_init(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [values[rng.integers(len(values))]]
    while len(centers) < k:
        d2 = np.min((values[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0.0:
            centers.append(values[rng.integers(len(values))])
            continue
        centers.append(values[rng.choice(len(values), p=d2 / total)])
    return np.array(centers, dtype=np.float64)


def _optimal_cut_centers(values: np.ndarray) -> np.ndarray:
    """Cluster means of the SSE-optimal threshold cut of 1-D data.

    The optimal 2-means partition of 1-D data is a cut in sorted order;
    prefix sums score every cut in O(n) after the sort.
    """
    v = np.sort(values)
    n = len(v)
    s = np.cumsum(v)
    s2 = np.cumsum(v**2)
    cuts = np.arange(1, n)  # lower block v[:c], upper block v[c:]
    lo_sse = s2[cuts - 1] - s[cuts - 1] ** 2 / cuts
    hi_n = n - cuts
    hi_s = s[-1] - s[cuts - 1]
    hi_sse = (s2[-1] - s2[cuts - 1]) - hi_s**2 / hi_n
    c = int(cuts[np.argmin(lo_sse + hi_sse)])
    return np.array([v[:c].mean(), v[c:].mean()])


def _lloyd_1d(values: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """1-D Lloyd iterations; asserts the SSE is non-increasing per iteration."""
    prev_sse = np.inf
    labels = np.zeros(len(values), dtype=int)
    for _ in range(max_iter):
        new_labels = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        for c in range(len(centers)):
            sel = new_labels == c
            if sel.any():
                centers[c] = values[sel].mean()
            else:
                # Re-seed an empty cluster at the point farthest from its center.
                far = int(np.argmax((values - centers[new_labels]) ** 2))
                centers[c] = values[far]
                new_labels[far] = c
        sse = float(np.sum((values - centers[new_labels]) ** 2))
        assert sse <= prev_sse + 1e-9, "k-means SSE increased across an iteration"
        if np.array_equal(new_labels, labels) and sse == prev_sse:
            break
        labels, prev_sse = new_labels, sse
    return labels, centers, prev_sse


def kmeans_scar(
    intensities, wall, k: int = 2, restarts: int = 5, seed: int = 0
) -> BaselineResult:
    """Lloyd's algorithm on wall-voxel intensities; the highest-centroid
    cluster is scar; best of `restarts` runs by within-cluster SSE."""
    mask = _wall_mask(wall)
    intensities = np.asarray(intensities, dtype=np.float64)
    values = intensities[mask]
    if len(np.unique(values)) < k:
        raise ValueError(
            f"k-means needs >= {k} distinct wall intensities, got {len(np.unique(values))}"
        )
    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts):
        if r == 0 and k == 2:
            # Deterministic seeding at the globally optimal threshold cut
            # (a Lloyd fixed point), so best-of-restarts is exact for k = 2;
            # random k-means++ restarts alone get stuck in local minima.
            centers = _optimal_cut_centers(values)
        else:
            centers = _kmeans_pp_init(values, k, rng)
        labels, centers, sse = _lloyd_1d(values, centers)
        if best is None or sse < best[0]:
            best = (sse, labels, centers)
    _, labels, centers = best
    scar_label = int(np.argmax(centers))
    scar = np.zeros_like(mask)
    scar[mask] = labels == scar_label
    return BaselineResult(scar=scar)


def _fcm_memberships(values: np.ndarray, centers: np.ndarray, m: float):
    """Membership matrix u (rows sum to 1) and the distance matrix.

    A voxel exactly at a centroid gets full membership there (split evenly
    if several centroids coincide on it).
    """
    dist = np.abs(values[:, None] - centers[None, :])
    singular = dist == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = dist ** (-2.0 / (m - 1.0))
        u = inv / inv.sum(axis=1, keepdims=True)
    rows = singular.any(axis=1)
    u[rows] = singular[rows] / singular[rows].sum(axis=1, keepdims=True)
    return u, dist


def fcm_scar(
    intensities,
    wall,
    c: int = 2,
    m: float = 2.0,
    tol: float = 1e-6,
    max_iter: int = 300,
    seed: int = 0,
) -> BaselineResult:
    """Fuzzy c-means on wall-voxel intensities; defuzzify by maximal
    membership; the highest-centroid cluster is scar."""
    mask = _wall_mask(wall)
    intensities = np.asarray(intensities, dtype=np.float64)
    values = intensities[mask]
    if len(np.unique(values)) < c:
        raise ValueError(
            f"FCM needs >= {c} distinct wall intensities, got {len(np.unique(values))}"
        )
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(values, c, rng)
    u = np.zeros((len(values), c))
    converged = False
    prev_j = np.inf
    for _ in range(max_iter):
        u, dist = _fcm_memberships(values, centers, m)
        um = u**m
        j = float((um * dist**2).sum())
        assert j <= prev_j + 1e-9, "FCM objective increased across an iteration"
        prev_j = j
        new_centers = (um * values[:, None]).sum(axis=0) / um.sum(axis=0)
        if float(np.max(np.abs(new_centers - centers))) < tol:
            centers = new_centers
            converged = True
            break
        centers = new_centers
    labels = np.argmax(u, axis=1)
    scar_label = int(np.argmax(centers))
    scar = np.zeros_like(mask)
    scar[mask] = labels == scar_label
    return BaselineResult(scar=scar, flags=() if converged else ("fcm_not_converged",))
