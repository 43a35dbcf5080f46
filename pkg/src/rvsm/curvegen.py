"""Synthetic 100x100 binary images of normal vs. shaky planar curves.

Shapes are simple triangles and quadrangles (not necessarily convex)
drawn as 1-pixel 8-connected outlines.  "Shaky" samples displace the
densified boundary along its local normal by a smooth correlated noise
field, mimicking tremor; "normal" samples skip that step.  Rotation,
shear/scale and a mild elastic distortion augment both classes without
erasing the label.  Everything is a pure function of (params, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .rng import derived_seed

LABEL_NORMAL = 0
LABEL_SHAKY = 1

MIN_FOREGROUND = 40     # rasterizations with fewer pixels are resampled
MIN_VERTEX_DIST = 0.15  # in unit coordinates
MAX_ATTEMPTS = 100

# vertex radii around the canvas center: large enough for a legible curve,
# small enough that rotation/shear/scale keep it (margin included) on canvas
VERTEX_RADIUS = (0.16, 0.32)


@dataclass(frozen=True)
class ShapeSpec:
    kind: str                 # "triangle" | "quadrangle"
    vertices: np.ndarray      # (k, 2) points in [0, 1]^2

    def __post_init__(self):
        expected = {"triangle": 3, "quadrangle": 4}
        if self.kind not in expected:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if len(self.vertices) != expected[self.kind]:
            raise ValueError(f"{self.kind} needs {expected[self.kind]} vertices")


@dataclass(frozen=True)
class AugmentParams:
    rotation_max: float = np.deg2rad(20.0)   # radians
    shear_max: float = 0.15
    scale_range: tuple = (0.85, 1.15)
    elastic_sigma: float = 4.0                # px
    elastic_alpha: float = 6.0                # px
    shaky_amplitude: float = 2.5              # px
    shaky_wavelength: float = 6.0             # px

    def __post_init__(self):
        numeric = (self.rotation_max, self.shear_max, self.elastic_sigma,
                   self.elastic_alpha, self.shaky_amplitude, self.shaky_wavelength)
        if any(v < 0 for v in numeric):
            raise ValueError("augmentation magnitudes must be nonnegative")
        lo, hi = self.scale_range
        if not (0.5 < lo <= hi < 1.5):
            raise ValueError(f"scale_range must lie within (0.5, 1.5), got {self.scale_range}")


@dataclass
class CurveSample:
    image: np.ndarray  # (size, size) uint8, values {0, 1}
    label: int
    seed: int


@dataclass
class Dataset:
    images: np.ndarray        # (n, size, size) uint8 {0, 1}
    labels: np.ndarray        # (n,) int64
    seeds: np.ndarray         # (n,) uint64, per-sample generator seeds

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return CurveSample(self.images[i], int(self.labels[i]), int(self.seeds[i]))


# ---------------------------------------------------------------------------
# geometry

def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _segments_intersect(p1, p2, p3, p4):
    """Proper or touching intersection of segments p1p2 and p3p4."""
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
                and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12)

    for d, a, b, c in ((d1, p3, p4, p1), (d2, p3, p4, p2), (d3, p1, p2, p3), (d4, p1, p2, p4)):
        if d == 0 and on_segment(a, b, c):
            return True
    return False


def is_simple_polygon(vertices) -> bool:
    """True when no two non-adjacent edges intersect."""
    v = np.asarray(vertices, dtype=np.float64)
    k = len(v)
    edges = [(v[i], v[(i + 1) % k]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if j == i or (j + 1) % k == i or (i + 1) % k == j:
                continue  # shared endpoint
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _polygon_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def sample_polygon(kind: str, rng: np.random.Generator) -> ShapeSpec:
    """Simple polygon with vertices in the unit square, pairwise distance >= 0.15."""
    n = {"triangle": 3, "quadrangle": 4}.get(kind)
    if n is None:
        raise ValueError(f"unknown shape kind {kind!r}")
    for _ in range(MAX_ATTEMPTS):
        # sorted angles with random radii give a star-shaped (hence simple)
        # polygon of usable size, convex or not
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = rng.uniform(*VERTEX_RADIUS, size=n)
        pts = 0.5 + radii[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        dists = [np.linalg.norm(pts[i] - pts[j]) for i in range(n) for j in range(i + 1, n)]
        if min(dists) < MIN_VERTEX_DIST:
            continue
        if _polygon_area(pts) < 0.02 or not is_simple_polygon(pts):
            continue
        return ShapeSpec(kind, pts)
    raise RuntimeError(f"could not sample a valid {kind} in {MAX_ATTEMPTS} attempts")


def densify_edges(vertices, spacing: float) -> np.ndarray:
    """Closed polyline sampled at <= spacing arc length along each edge.

    The returned points wrap implicitly: the last point is the one just
    before the starting vertex comes around again.
    """
    v = np.asarray(vertices, dtype=np.float64)
    points = []
    k = len(v)
    for i in range(k):
        a, b = v[i], v[(i + 1) % k]
        steps = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        for s in range(steps):
            points.append(a + (b - a) * (s / steps))
    return np.asarray(points)


# ---------------------------------------------------------------------------
# shaky perturbation

def _closed_normals(points):
    fwd = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    lengths = np.linalg.norm(fwd, axis=1)
    lengths[lengths == 0] = 1.0
    normals = np.stack([-fwd[:, 1], fwd[:, 0]], axis=1)
    return normals / lengths[:, None]


def shaky_perturb(points, params: AugmentParams, rng: np.random.Generator,
                  px_per_unit: float = 79.0) -> np.ndarray:
    """Displace a densified closed polyline along its normals by smooth noise.

    The field is white noise smoothed circularly with a Gaussian of width
    ``shaky_wavelength`` (in points, which the densification spaces about
    one pixel apart), rescaled to RMS ``shaky_amplitude`` pixels and capped
    at four amplitudes.
    """
    pts = np.asarray(points, dtype=np.float64)
    amp = params.shaky_amplitude
    if amp == 0 or len(pts) < 3:
        return pts.copy()
    noise = rng.standard_normal(len(pts))
    # wavelength is the full width (FWHM) of the smoothing kernel, in
    # points; densification spaces points about one pixel apart
    sigma = params.shaky_wavelength / 2.355
    fld = gaussian_filter1d(noise, sigma=sigma, mode="wrap") if sigma > 0 else noise
    std = fld.std()
    if std == 0:
        return pts.copy()
    fld *= amp / std
    peak = np.abs(fld).max()
    if peak > 4 * amp:
        fld *= 4 * amp / peak
    return pts + _closed_normals(pts) * (fld / px_per_unit)[:, None]


# ---------------------------------------------------------------------------
# augmentation

def rotate(points, angle: float, center=(0.5, 0.5)) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64) - center
    c, s = np.cos(angle), np.sin(angle)
    return pts @ np.array([[c, s], [-s, c]]) + center


def affine_transform(points, shear: float, scale_x: float, scale_y: float,
                     center=(0.5, 0.5)) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64) - center
    mat = np.array([[scale_x, 0.0], [shear * scale_x, scale_y]])
    return pts @ mat + center


def augment_points(points, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(-params.rotation_max, params.rotation_max)
    shear = rng.uniform(-params.shear_max, params.shear_max)
    sx = rng.uniform(*params.scale_range)
    sy = rng.uniform(*params.scale_range)
    return affine_transform(rotate(points, angle), shear, sx, sy)


def elastic_distort(image, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Nearest-neighbor resample through a Gaussian-smoothed displacement field.

    The raw per-pixel field is uniform in [-1, 1]; smoothing with
    ``elastic_sigma`` and scaling by ``elastic_alpha`` yields sub-pixel
    displacements at the default settings, a deliberately mild warp that
    cannot fake or undo the shaky label.
    """
    img = np.asarray(image)
    if params.elastic_alpha == 0:
        return img.copy()
    h, w = img.shape
    dx = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), params.elastic_sigma) * params.elastic_alpha
    dy = gaussian_filter(rng.uniform(-1, 1, size=(h, w)), params.elastic_sigma) * params.elastic_alpha
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_r = np.clip(np.rint(rows + dy), 0, h - 1).astype(np.intp)
    src_c = np.clip(np.rint(cols + dx), 0, w - 1).astype(np.intp)
    return img[src_r, src_c]


# ---------------------------------------------------------------------------
# rasterization

def _bresenham(grid, r0, c0, r1, c1):
    """8-connected line between two pixel coordinates."""
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        grid[r, c] = 1
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def rasterize(polyline, size: int = 100, stroke: int = 1, closed: bool = True) -> np.ndarray:
    """Draw a polyline into a size x size binary grid with a 10% margin.

    Unit coordinates map to the central (size - 2*margin) pixel span;
    points beyond the canvas clip to its edge.  Consecutive points are
    joined by 8-connected lines of the given stroke width.
    """
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("cannot rasterize an empty polyline")
    if stroke < 1:
        raise ValueError(f"stroke must be >= 1, got {stroke}")
    margin = int(round(0.1 * size))
    span = size - 1 - 2 * margin
    px = np.rint(margin + pts * span).astype(np.intp)
    px = np.clip(px, 0, size - 1)
    grid = np.zeros((size, size), dtype=np.uint8)
    # image rows grow downward; unit y grows upward
    rows = size - 1 - px[:, 1]
    cols = px[:, 0]
    n = len(pts)
    last = n if closed and n > 2 else n - 1
    for i in range(last):
        j = (i + 1) % n
        _bresenham(grid, rows[i], cols[i], rows[j], cols[j])
    if n == 1:
        grid[rows[0], cols[0]] = 1
    if stroke > 1:
        grid = _dilate(grid, stroke)
    return grid


def _dilate(grid, stroke):
    rad = stroke // 2
    out = grid.copy()
    rr, cc = np.nonzero(grid)
    size = grid.shape[0]
    for dr in range(-rad, rad + 1):
        for dc in range(-rad, rad + 1):
            if dr * dr + dc * dc <= rad * rad:
                r2 = np.clip(rr + dr, 0, size - 1)
                c2 = np.clip(cc + dc, 0, size - 1)
                out[r2, c2] = 1
    return out


# ---------------------------------------------------------------------------
# dataset assembly

def generate_sample(label: int, seed: int, params: AugmentParams,
                    size: int = 100, stroke: int = 1) -> CurveSample:
    """One curve image from its private seed; resamples degenerate draws."""
    rng = np.random.default_rng(seed)
    margin = int(round(0.1 * size))
    px_per_unit = size - 1 - 2 * margin
    # 40 foreground pixels at the stock 100x100 canvas, scaled with size
    min_foreground = max(8, int(round(MIN_FOREGROUND * size / 100)))
    for _ in range(MAX_ATTEMPTS):
        kind = "triangle" if rng.integers(2) == 0 else "quadrangle"
        shape = sample_polygon(kind, rng)
        pts = densify_edges(shape.vertices, spacing=1.0 / px_per_unit)
        if label == LABEL_SHAKY:
            pts = shaky_perturb(pts, params, rng, px_per_unit)
        pts = augment_points(pts, params, rng)
        img = rasterize(pts, size=size, stroke=stroke)
        img = elastic_distort(img, params, rng)
        if int(img.sum()) >= min_foreground:
            return CurveSample(img, label, seed)
    raise RuntimeError(f"no viable rasterization after {MAX_ATTEMPTS} attempts (seed {seed})")


def _generate_split(n: int, split: str, params: AugmentParams, seed: int, size: int) -> Dataset:
    images = np.empty((n, size, size), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    seeds = np.empty(n, dtype=np.uint64)
    for i in range(n):
        sample_seed = derived_seed(seed, split, i)
        label = LABEL_NORMAL if i % 2 == 0 else LABEL_SHAKY
        sample = generate_sample(label, sample_seed, params, size=size)
        images[i] = sample.image
        labels[i] = sample.label
        seeds[i] = sample.seed
    return Dataset(images, labels, seeds)


def generate_dataset(n_train: int, n_test: int, params: AugmentParams | None = None,
                     seed: int = 0, size: int = 100):
    """Balanced train/test datasets from disjoint seed streams."""
    if n_train < 2 or n_test < 2:
        raise ValueError("need at least 2 samples per split")
    params = params or AugmentParams()
    train = _generate_split(n_train, "train", params, seed, size)
    test = _generate_split(n_test, "test", params, seed, size)
    return train, test


def as_training_arrays(ds: Dataset):
    """float64 (N, 1, H, W) images mapped to {-1, +1}, plus int64 labels.

    Centering the binary pixels gives every spatial position unit second
    moment, which keeps fan-in-scaled initializations well conditioned;
    raw {0, 1} images leave 97% of each feature map at exactly zero and
    gradients orders of magnitude too small.
    """
    return ds.images[:, None, :, :].astype(np.float64) * 2.0 - 1.0, ds.labels.copy()
