"""Spherical pillar binning of LiDAR point clouds into range pseudo-images.

Points are binned by (azimuth, polar) angle; each cell of the resulting
single-channel image holds the minimum range of the points that fell into
it, or the sensor's maximum range when the pillar is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

PathLike = Union[str, Path]

# guards floor() against spans that are an exact multiple of the step
_FLOOR_EPS = 1e-9


class InvalidInputError(ValueError):
    pass


class SphericalPoint(NamedTuple):
    r: float
    theta: float
    phi: float


@dataclass(frozen=True)
class PillarGridSpec:
    """Angular grid over the sensor field of view.

    Defaults follow the training setup: a frontal half-plane in azimuth at
    pi/60 and a polar band symmetric about the horizon at pi/36.
    """

    theta_min: float = -math.pi / 2
    theta_max: float = math.pi / 2
    phi_min: float = math.pi / 4
    phi_max: float = 3 * math.pi / 4
    d_theta: float = math.pi / 60
    d_phi: float = math.pi / 36
    r_max: float = 10.0

    def __post_init__(self):
        if not (self.theta_min < self.theta_max and self.phi_min < self.phi_max):
            raise InvalidInputError("angular bounds must be increasing")
        if not (self.d_theta > 0 and self.d_phi > 0 and self.r_max > 0):
            raise InvalidInputError("resolutions and r_max must be positive")
        n_phi, n_theta = grid_dims(self)
        if n_phi < 1 or n_theta < 1:
            raise InvalidInputError("grid must contain at least one pillar")

    @property
    def shape(self) -> tuple[int, int]:
        return grid_dims(self)

    def theta_centers(self) -> np.ndarray:
        n_theta = grid_dims(self)[1]
        return self.theta_min + (np.arange(n_theta) + 0.5) * self.d_theta

    def phi_centers(self) -> np.ndarray:
        n_phi = grid_dims(self)[0]
        return self.phi_min + (np.arange(n_phi) + 0.5) * self.d_phi


@dataclass
class PseudoImage:
    values: np.ndarray  # (n_phi, n_theta), row = polar bin, column = azimuth bin
    spec: PillarGridSpec

    def normalized(self) -> np.ndarray:
        return self.values / self.spec.r_max


def grid_dims(spec: PillarGridSpec) -> tuple[int, int]:
    """Return ``(n_phi, n_theta)`` for the grid."""
    n_theta = math.floor((spec.theta_max - spec.theta_min) / spec.d_theta + _FLOOR_EPS)
    n_phi = math.floor((spec.phi_max - spec.phi_min) / spec.d_phi + _FLOOR_EPS)
    return n_phi, n_theta


def cartesian_to_spherical(p) -> SphericalPoint:
    """Convert one body-frame point (x, y, z) to (r, theta, phi).

    theta is the azimuth in [-pi, pi), phi the polar angle from +Z. The
    origin maps to (0, 0, 0).
    """
    x, y, z = (float(c) for c in p)
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise InvalidInputError(f"non-finite point {p!r}")
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        return SphericalPoint(0.0, 0.0, 0.0)
    theta = math.atan2(y, x)
    if theta >= math.pi:
        theta = -math.pi
    phi = math.acos(max(-1.0, min(1.0, z / r)))
    return SphericalPoint(r, theta, phi)


def cartesian_to_spherical_array(points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`cartesian_to_spherical`; returns an (N, 3) array of r, theta, phi."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    r = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    theta[theta >= math.pi] = -math.pi
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arccos(np.clip(pts[:, 2] / r, -1.0, 1.0))
    origin = r == 0.0
    theta[origin] = 0.0
    phi[origin] = 0.0
    return np.stack([r, theta, phi], axis=1)


def spherical_to_cartesian(sp) -> np.ndarray:
    r, theta, phi = sp
    s = math.sin(phi)
    return np.array([r * s * math.cos(theta), r * s * math.sin(theta), r * math.cos(phi)])


def spherical_to_cartesian_array(sph: np.ndarray) -> np.ndarray:
    sph = np.asarray(sph, dtype=np.float64).reshape(-1, 3)
    r, theta, phi = sph[:, 0], sph[:, 1], sph[:, 2]
    s = np.sin(phi)
    return np.stack([r * s * np.cos(theta), r * s * np.sin(theta), r * np.cos(phi)], axis=1)


def bin_index(spec: PillarGridSpec, pt) -> Optional[tuple[int, int]]:
    """Pillar ``(i, j)`` (azimuth, polar) containing ``pt``, or None if outside the FOV."""
    _, theta, phi = pt
    if not (spec.theta_min <= theta < spec.theta_max and spec.phi_min <= phi < spec.phi_max):
        return None
    n_phi, n_theta = grid_dims(spec)
    i = math.floor((theta - spec.theta_min) / spec.d_theta)
    j = math.floor((phi - spec.phi_min) / spec.d_phi)
    if i >= n_theta or j >= n_phi:
        return None
    return i, j


def bin_indices(spec: PillarGridSpec, sph: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`bin_index`. Returns ``(i, j, inside)`` for an (N, 3) spherical array."""
    theta, phi = sph[:, 1], sph[:, 2]
    n_phi, n_theta = grid_dims(spec)
    i = np.floor((theta - spec.theta_min) / spec.d_theta).astype(np.int64)
    j = np.floor((phi - spec.phi_min) / spec.d_phi).astype(np.int64)
    inside = (
        (theta >= spec.theta_min) & (theta < spec.theta_max)
        & (phi >= spec.phi_min) & (phi < spec.phi_max)
        & (i < n_theta) & (j < n_phi)
    )
    return i, j, inside


def project_spherical(spec: PillarGridSpec, sph: np.ndarray) -> np.ndarray:
    """Min-range image from an (N, 3) array of spherical points. Over-range returns clamp to r_max."""
    n_phi, n_theta = grid_dims(spec)
    flat = np.full(n_phi * n_theta, spec.r_max)
    if len(sph):
        i, j, inside = bin_indices(spec, sph)
        r = np.minimum(sph[inside, 0], spec.r_max)
        np.minimum.at(flat, j[inside] * n_theta + i[inside], r)
    return flat.reshape(n_phi, n_theta)


def project(spec: PillarGridSpec, cloud) -> PseudoImage:
    """Project a cloud into a :class:`PseudoImage`.

    ``cloud`` is either a sequence of :class:`SphericalPoint` or an (N, 3)
    array already in spherical coordinates.
    """
    sph = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return PseudoImage(project_spherical(spec, sph), spec)


def project_cartesian(spec: PillarGridSpec, points: np.ndarray) -> PseudoImage:
    """Preprocess and project a Cartesian (N, 3) body-frame cloud."""
    return PseudoImage(project_spherical(spec, cartesian_to_spherical_array(points)), spec)


# -- file formats ------------------------------------------------------------

def read_cloud(path: PathLike) -> np.ndarray:
    """Read a line-delimited ``x y z`` cloud. Blank lines and ``#`` comments are skipped."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidInputError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            rows.append([float(v) for v in parts])
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_cloud(path: PathLike, points: np.ndarray) -> None:
    with open(path, "w") as fh:
        for x, y, z in np.asarray(points).reshape(-1, 3):
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def write_image(path: PathLike, img: PseudoImage) -> None:
    """Header ``N_phi N_theta r_max`` followed by one line per polar row."""
    n_phi, n_theta = img.values.shape
    with open(path, "w") as fh:
        fh.write(f"{n_phi} {n_theta} {img.spec.r_max!r}\n")
        for row in img.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_image(path: PathLike) -> tuple[np.ndarray, float]:
    """Return ``(values, r_max)`` from a pseudo-image dump."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise InvalidInputError(f"{path}: bad header")
        n_phi, n_theta, r_max = int(header[0]), int(header[1]), float(header[2])
        values = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if values.shape != (n_phi, n_theta):
        raise InvalidInputError(f"{path}: expected {n_phi}x{n_theta} values, got {values.shape}")
    return values, r_max
