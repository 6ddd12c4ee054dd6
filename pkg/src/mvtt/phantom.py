"""Synthetic LGE-CMRI-like phantom volumes with paired ground-truth masks.

A phantom is an ellipsoidal "left atrium" body with a few cylindrical
"pulmonary vein" stubs, surrounded by a thin wall shell of nulled myocardium.
Scar patches are hyper-enhanced speckles confined to that wall shell.  The
generator is a pure function of its spec (including the seed), so datasets
are reproducible bit for bit.

Volumes round-trip through the MVTTVOL1 container: one JSON header line
followed by a little-endian float64 intensity blob and optional bit-packed
mask blobs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .fileio import FileFormatError, read_header, read_header_blob, write_header_blob

VOLUME_MAGIC = "MVTTVOL1"


@dataclass
class Volume:
    """A 3-D intensity volume (z, y, x) with optional ground-truth masks."""

    intensities: np.ndarray
    spacing: tuple[float, float, float] = (0.75, 0.75, 2.0)
    la_pv: np.ndarray | None = None
    scar: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.intensities = np.ascontiguousarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 3:
            raise ValueError(f"intensities must be 3-D (z, y, x), got shape {self.intensities.shape}")
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise ValueError("intensities must be finite and non-negative")
        for name in ("la_pv", "scar"):
            mask = getattr(self, name)
            if mask is None:
                continue
            mask = np.ascontiguousarray(mask, dtype=bool)
            if mask.shape != self.intensities.shape:
                raise ValueError(
                    f"{name} mask shape {mask.shape} != intensity shape {self.intensities.shape}"
                )
            setattr(self, name, mask)

    @property
    def extents(self) -> tuple[int, int, int]:
        """(nx, ny, nz) — the header convention; arrays are indexed (z, y, x)."""
        nz, ny, nx = self.intensities.shape
        return (nx, ny, nz)


@dataclass
class PhantomSpec:
    """Everything that determines one phantom, seed included."""

    seed: int = 0
    extents: tuple[int, int, int] = (32, 32, 32)  # (z, y, x)
    spacing: tuple[float, float, float] = (0.75, 0.75, 2.0)
    center_jitter: float = 1.5
    semi_axis_z: tuple[float, float] = (6.0, 8.0)
    semi_axis_y: tuple[float, float] = (9.0, 11.0)
    semi_axis_x: tuple[float, float] = (9.0, 11.0)
    tube_count: tuple[int, int] = (2, 3)
    tube_radius: tuple[float, float] = (1.2, 2.0)
    tube_length: tuple[float, float] = (3.0, 6.0)
    wall_thickness: int = 2
    scar_patch_count: int = 4
    scar_patch_size: tuple[int, int] = (3, 10)
    background_level: float = 10.0
    nulled_level: float = 20.0
    blood_level: float = 60.0
    scar_level: float = 120.0
    noise_std: float = 5.0

    def __post_init__(self) -> None:
        z, y, x = self.extents
        if y % 8 != 0 or x % 8 != 0:
            raise ValueError(f"in-plane extents must be divisible by 8, got (y, x) = ({y}, {x})")
        if min(self.extents) < 8:
            raise ValueError(f"extents too small: {self.extents}")
        if not (self.scar_level > self.blood_level >= self.nulled_level):
            raise ValueError(
                "contrast ordering violated: need scar > blood >= nulled, got "
                f"{self.scar_level}, {self.blood_level}, {self.nulled_level}"
            )
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.wall_thickness < 1:
            raise ValueError(f"wall_thickness must be >= 1, got {self.wall_thickness}")
        if self.scar_patch_count < 0:
            raise ValueError(f"scar_patch_count must be >= 0, got {self.scar_patch_count}")
        lo, hi = self.scar_patch_size
        if not (1 <= lo <= hi):
            raise ValueError(f"scar_patch_size range must satisfy 1 <= lo <= hi, got {lo}, {hi}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        kwargs = dict(d)
        for key, value in kwargs.items():
            if isinstance(value, list):
                kwargs[key] = tuple(value)
        return cls(**kwargs)


def boundary_shell(mask: np.ndarray, radius: float) -> np.ndarray:
    """Symmetric shell of voxels within `radius` of the mask boundary.

    The boundary is the set of mask voxels with a face-adjacent background
    voxel (6-connectivity); radius 0 yields exactly those voxels.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("boundary_shell: mask is empty")
    if mask.all():
        raise ValueError("boundary_shell: mask covers the whole volume, boundary undefined")
    inner = ndimage.distance_transform_edt(mask)
    outer = ndimage.distance_transform_edt(~mask)
    return (mask & (inner <= radius + 1.0)) | (~mask & (outer <= radius))


def _ellipsoid(shape, center, semi_axes) -> np.ndarray:
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    q = sum(((g - c) / a) ** 2 for g, c, a in zip((zz, yy, xx), center, semi_axes))
    return q <= 1.0


def _tube(shape, start, direction, length, radius) -> np.ndarray:
    """Voxels within `radius` of the segment start → start + length·direction."""
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    p = np.stack([zz, yy, xx], axis=-1)
    d = np.asarray(direction, dtype=np.float64)
    rel = p - np.asarray(start, dtype=np.float64)
    t = np.clip(rel @ d, 0.0, length)
    dist2 = np.sum((rel - t[..., None] * d) ** 2, axis=-1)
    return dist2 <= radius**2


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _grow_scar_patches(shell: np.ndarray, spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Place disjoint compact scar patches inside the wall shell.

    Each patch is the target-size set of unused shell voxels nearest to a
    randomly chosen seed voxel, so patch sizes (and hence the total scar
    voxel count) are exact.
    """
    scar = np.zeros(shell.shape, dtype=bool)
    if spec.scar_patch_count == 0:
        return scar
    coords = np.argwhere(shell)
    used = np.zeros(len(coords), dtype=bool)
    lo, hi = spec.scar_patch_size
    for _ in range(spec.scar_patch_count):
        size = int(rng.integers(lo, hi + 1))
        free = np.flatnonzero(~used)
        if len(free) < size:
            raise ValueError(
                f"infeasible spec: scar patch of {size} voxels does not fit in the "
                f"remaining wall shell ({len(free)} voxels free of {len(coords)})"
            )
        seed_idx = int(rng.choice(free))
        dist = np.linalg.norm(coords[free] - coords[seed_idx], axis=1)
        take = free[np.argsort(dist, kind="stable")[:size]]
        used[take] = True
        scar[tuple(coords[take].T)] = True
    return scar


def generate(spec: PhantomSpec) -> Volume:
    """Deterministically generate one phantom volume with ground-truth masks."""
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.extents)

    center = np.array(shape, dtype=np.float64) / 2.0
    center += rng.uniform(-spec.center_jitter, spec.center_jitter, size=3)
    semi = np.array(
        [
            rng.uniform(*spec.semi_axis_z),
            rng.uniform(*spec.semi_axis_y),
            rng.uniform(*spec.semi_axis_x),
        ]
    )
    la_pv = _ellipsoid(shape, center, semi)

    n_tubes = int(rng.integers(spec.tube_count[0], spec.tube_count[1] + 1))
    for _ in range(n_tubes):
        d = _unit_vector(rng)
        # Exit point of the ray from the center through the ellipsoid surface.
        t_exit = 1.0 / np.sqrt(np.sum((d / semi) ** 2))
        start = center + 0.5 * t_exit * d
        length = 0.5 * t_exit + rng.uniform(*spec.tube_length)
        radius = rng.uniform(*spec.tube_radius)
        la_pv |= _tube(shape, start, d, length, radius)

    shell = boundary_shell(la_pv, spec.wall_thickness)
    scar = _grow_scar_patches(shell, spec, rng)

    intensities = np.full(shape, spec.background_level)
    intensities[la_pv] = spec.blood_level
    intensities[shell] = spec.nulled_level
    intensities[scar] = spec.scar_level
    if spec.noise_std > 0:
        intensities = intensities + rng.normal(0.0, spec.noise_std, size=shape)
    intensities = np.maximum(intensities, 0.0)

    return Volume(intensities=intensities, spacing=spec.spacing, la_pv=la_pv, scar=scar)


def save(volume: Volume, path) -> None:
    """Write a Volume to an MVTTVOL1 container (atomic)."""
    nz, ny, nx = volume.intensities.shape
    header = {
        "magic": VOLUME_MAGIC,
        "extents": [nx, ny, nz],
        "spacing": list(volume.spacing),
        "has_la_pv": volume.la_pv is not None,
        "has_scar": volume.scar is not None,
    }
    parts = [volume.intensities.astype("<f8").tobytes()]
    for mask in (volume.la_pv, volume.scar):
        if mask is not None:
            parts.append(np.packbits(mask.ravel()).tobytes())
    write_header_blob(path, header, b"".join(parts))


def _mask_bytes(n_voxels: int) -> int:
    return (n_voxels + 7) // 8


def inspect(path) -> dict:
    """Read only the JSON header (extents, spacing, presence flags)."""
    return read_header(path, VOLUME_MAGIC)


def load(path) -> Volume:
    """Read an MVTTVOL1 container back into a Volume (bit-exact)."""
    header, blob = read_header_blob(path, VOLUME_MAGIC)
    try:
        nx, ny, nz = (int(v) for v in header["extents"])
        spacing = tuple(float(v) for v in header["spacing"])
        has_la_pv = bool(header["has_la_pv"])
        has_scar = bool(header["has_scar"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed MVTTVOL1 header: {exc}") from exc
    n = nz * ny * nx
    expected = 8 * n + _mask_bytes(n) * (int(has_la_pv) + int(has_scar))
    if len(blob) != expected:
        raise FileFormatError(
            f"{path}: blob size mismatch for extents {nx}x{ny}x{nz}: "
            f"expected {expected} bytes, got {len(blob)}"
        )
    intensities = np.frombuffer(blob[: 8 * n], dtype="<f8").reshape(nz, ny, nx).copy()
    offset = 8 * n
    masks: dict[str, np.ndarray | None] = {"la_pv": None, "scar": None}
    for name, present in (("la_pv", has_la_pv), ("scar", has_scar)):
        if present:
            raw = np.frombuffer(blob[offset : offset + _mask_bytes(n)], dtype=np.uint8)
            masks[name] = np.unpackbits(raw)[:n].astype(bool).reshape(nz, ny, nx)
            offset += _mask_bytes(n)
    return Volume(intensities=intensities, spacing=spacing, la_pv=masks["la_pv"], scar=masks["scar"])


def derived_seed(seed: int, index: int) -> int:
    """Stable per-volume seed derived from a dataset seed and an index."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def make_dataset(
    n: int, template: PhantomSpec, seed: int, folds: int = 10
) -> tuple[list[Volume], list[int]]:
    """Generate n phantoms with derived seeds and a balanced fold partition.

    Volume i goes to fold i % folds, so fold sizes differ by at most one and
    the partition is a pure function of (n, folds).
    """
    if folds < 1:
        raise ValueError(f"folds must be >= 1, got {folds}")
    if n < folds:
        raise ValueError(f"need at least one volume per fold: n={n} < folds={folds}")
    volumes = [generate(replace(template, seed=derived_seed(seed, i))) for i in range(n)]
    assignment = [i % folds for i in range(n)]
    return volumes, assignment
