"""Synthetic camera frames, Canny edges, needle edge distance, overhead pose.

Pixel coordinates are ``(u, v)`` = (column, row). A :class:`CameraModel` maps
pixel centres to world millimetres by ``world = origin_offset + scale * (u, v)``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import geometry
from .errors import GarmentNotFound, ValidationError
from .trajectory import resample_equidistant
from .validation import check_image, check_pose, check_positive

logger = logging.getLogger(__name__)

GAUSSIAN_SIGMA = 1.0
DEFAULT_ROI_HALF_EXTENT = 64
BACKGROUND_THRESHOLD = 25
MIN_COMPONENT_PIXELS = 100


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", check_image(self.pixels))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def to_pgm(self):
        """Binary PGM (P5) bytes."""
        data = np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)
        head = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return head + data.tobytes()

    @classmethod
    def from_pgm(cls, blob):
        parts = blob.split(maxsplit=4)
        if parts[0] != b"P5":
            raise ValidationError("not a binary PGM (P5) image")
        w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
        if maxval != 255:
            raise ValidationError("only 8-bit PGM is supported")
        raw = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
        return cls(raw.reshape(h, w).copy())


@dataclass(frozen=True)
class CameraModel:
    width: int
    height: int
    scale: float
    origin_offset: tuple = (0.0, 0.0)
    needle_px: tuple = (0.0, 0.0)

    def __post_init__(self):
        check_positive(self.scale, "scale")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("camera dimensions must be positive")
        u, v = self.needle_px
        if not (0 <= u <= self.width - 1 and 0 <= v <= self.height - 1):
            raise ValidationError(f"needle_px {self.needle_px} outside the image")

    @classmethod
    def centered_on_needle(cls, width=160, height=160, scale=0.5):
        """Needle camera: the needle (world origin) sits at the image centre."""
        needle = ((width - 1) / 2.0, (height - 1) / 2.0)
        return cls(width, height, scale, (-scale * needle[0], -scale * needle[1]), needle)

    def to_world(self, uv):
        return np.asarray(self.origin_offset) + self.scale * np.asarray(uv, dtype=float)

    def to_pixel(self, xy):
        return (np.asarray(xy, dtype=float) - np.asarray(self.origin_offset)) / self.scale

    def pixel_centers(self):
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return self.to_world(np.column_stack([u.ravel(), v.ravel()]))


@dataclass(frozen=True)
class EdgeMeasurement:
    edge_dist: float
    nearest_edge_point: tuple
    timestamp: float = 0.0
    valid: bool = True

    @classmethod
    def invalid(cls, timestamp=0.0):
        return cls(float("nan"), (float("nan"), float("nan")), timestamp, False)

    def to_dict(self):
        return {"edge_dist_mm": self.edge_dist if self.valid else None,
                "nearest_edge_point_mm": list(self.nearest_edge_point) if self.valid else None,
                "timestamp_s": self.timestamp, "valid": self.valid}


@dataclass(frozen=True)
class PoseEstimate:
    x: float
    y: float
    theta: float
    grasp_point: tuple
    score: float

    @property
    def pose(self):
        return self.x, self.y, self.theta

    def to_dict(self):
        return {"x_mm": self.x, "y_mm": self.y, "theta_deg": math.degrees(self.theta),
                "grasp_point_mm": list(self.grasp_point), "score": self.score}


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_garment(thread, pose, camera, fill=180, background=60, noise_sd=0.0, seed=0):
    """Point-sample the posed contour at every pixel centre, plus Gaussian noise."""
    pose = check_pose(pose)
    if fill == background:
        raise ValidationError("fill and background intensities must differ")
    contour = geometry.transform_points(thread.contour, pose)
    inside = geometry.points_in_polygon(camera.pixel_centers(), contour)
    if not inside.any():
        raise ValidationError("garment lies entirely outside the camera frame")
    img = np.where(inside, float(fill), float(background)).reshape(camera.height, camera.width)
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, noise_sd, img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# Needle camera path
# ---------------------------------------------------------------------------

def dynamic_thresholds(frames):
    """Canny (low, high) = (0.5, 1.5) x median intensity pooled over ``frames``."""
    frames = list(frames)
    if not frames:
        raise ValidationError("threshold window is empty")
    pooled = np.concatenate([np.asarray(getattr(f, "pixels", f), dtype=float).ravel()
                             for f in frames])
    m = float(np.median(pooled))
    return 0.5 * m, min(1.5 * m, 255.0)


def _gradients(pixels):
    smoothed = ndimage.gaussian_filter(np.asarray(pixels, dtype=float), GAUSSIAN_SIGMA,
                                       truncate=2.0, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    return gx, gy


def _non_maximum_suppression(mag, gx, gy):
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def shifted(dv, du):
        return padded[1 + dv:1 + dv + h, 1 + du:1 + du + w]

    # neighbour offsets (dv, du) along the quantised gradient direction
    bins = [((angle < 22.5) | (angle >= 157.5), (0, 1)),
            ((angle >= 22.5) & (angle < 67.5), (1, 1)),
            ((angle >= 67.5) & (angle < 112.5), (1, 0)),
            ((angle >= 112.5) & (angle < 157.5), (1, -1))]
    keep = np.zeros_like(mag, dtype=bool)
    for mask, (dv, du) in bins:
        fwd, back = shifted(dv, du), shifted(-dv, -du)
        # ties broken towards the forward neighbour so plateaus stay one pixel wide
        keep |= mask & (mag > fwd) & (mag >= back)
    return np.where(keep, mag, 0.0)


def canny_mask(img, low, high):
    """Boolean edge mask from the classic Canny stages."""
    pixels = getattr(img, "pixels", img)
    if not 0 <= low < high:
        raise ValidationError(f"need 0 <= low < high, got ({low}, {high})")
    gx, gy = _gradients(pixels)
    mag = np.hypot(gx, gy)
    thin = _non_maximum_suppression(mag, gx, gy)
    candidates = (thin > 0) & (thin >= low)
    if not candidates.any():
        return candidates
    labels, _ = ndimage.label(candidates, structure=np.ones((3, 3)))
    strong_labels = np.unique(labels[thin >= high])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels)


def detect_edges(img, low, high):
    """Edge pixels as an ``(n, 2)`` integer array of ``(u, v)``."""
    v, u = np.nonzero(canny_mask(img, low, high))
    return np.column_stack([u, v])


def needle_edge_distance(edges, camera, roi_half_extent=DEFAULT_ROI_HALF_EXTENT,
                         garment_interior_hint=None, timestamp=0.0):
    """Signed mm distance from the needle to the nearest edge pixel inside the ROI.

    The ROI is the square of half-width ``roi_half_extent`` pixels around the
    needle, with its corners beyond ``roi_half_extent`` clipped. The sign is
    negative when the needle and the interior hint lie on opposite sides of
    the nearest edge point.
    """
    roi = check_positive(roi_half_extent, "roi_half_extent")
    edges = np.asarray(edges, dtype=float).reshape(-1, 2)
    needle = np.asarray(camera.needle_px, dtype=float)
    if len(edges):
        rel = edges - needle
        in_roi = np.all(np.abs(rel) <= roi, axis=1)
        dist_px = np.hypot(rel[:, 0], rel[:, 1])
        in_roi &= dist_px <= roi
    if not len(edges) or not in_roi.any():
        return EdgeMeasurement.invalid(timestamp)
    idx = np.nonzero(in_roi)[0]
    k = idx[np.argmin(dist_px[idx])]
    needle_mm = camera.to_world(needle)
    edge_mm = camera.to_world(edges[k])
    dist = float(dist_px[k] * camera.scale)
    sign = 1.0
    if garment_interior_hint is not None:
        hint = np.asarray(garment_interior_hint, dtype=float)
        if np.dot(needle_mm - edge_mm, hint - edge_mm) < 0:
            sign = -1.0
    return EdgeMeasurement(sign * dist, (float(edge_mm[0]), float(edge_mm[1])), timestamp, True)


def oracle_edge_distance(thread, garment_pose, needle_world=(0.0, 0.0), timestamp=0.0):
    """Exact signed distance (positive inside) from the needle to the posed contour."""
    pose = check_pose(garment_pose, "garment_pose")
    local = geometry.inverse_transform_points(np.atleast_2d(needle_world), pose)
    sd, nearest = geometry.signed_distance(local, thread.contour)
    world = geometry.transform_points(nearest, pose)[0]
    return EdgeMeasurement(float(sd[0]), (float(world[0]), float(world[1])), timestamp, True)


class CannyEdgeDetector(BaseEstimator, TransformerMixin):
    """Canny detector whose thresholds are fitted on a window of frames.

    ``fit(frames)`` sets ``low_``/``high_`` from the median rule;
    ``transform(frames)`` returns one edge point set per frame.
    """

    def __init__(self, low=None, high=None):
        self.low = low
        self.high = high

    def fit(self, X, y=None):
        if self.low is not None and self.high is not None:
            self.low_, self.high_ = float(self.low), float(self.high)
        else:
            self.low_, self.high_ = dynamic_thresholds(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "low_")
        return [detect_edges(f, self.low_, self.high_) for f in X]


# ---------------------------------------------------------------------------
# Overhead pose estimation
# ---------------------------------------------------------------------------

def _foreground_component(img, background, threshold):
    diff = np.abs(np.asarray(getattr(img, "pixels", img), dtype=float)
                  - np.asarray(getattr(background, "pixels", background), dtype=float))
    mask = diff > threshold
    labels, n = ndimage.label(mask)
    if n == 0:
        raise GarmentNotFound("garment not found: no foreground pixels")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    best = int(np.argmax(sizes)) + 1
    if sizes[best - 1] < MIN_COMPONENT_PIXELS:
        raise GarmentNotFound(
            f"garment not found: largest component has {int(sizes[best - 1])} px "
            f"< {MIN_COMPONENT_PIXELS}")
    return ndimage.binary_fill_holes(labels == best)


def _boundary_pixels(mask):
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1),
                                      border_value=0)
    v, u = np.nonzero(mask & ~interior)
    return np.column_stack([u, v]).astype(float)


def _golden_section(f, a, b, tol):
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def estimate_pose(img, background, template, camera, threshold=BACKGROUND_THRESHOLD,
                  template_spacing=None):
    """Recover the garment pose from an overhead frame and a background frame."""
    pix = getattr(img, "pixels", img)
    bg = getattr(background, "pixels", background)
    if np.shape(pix) != np.shape(bg):
        raise ValidationError("image and background must have the same dimensions")
    mask = _foreground_component(pix, bg, threshold)
    boundary = camera.to_world(_boundary_pixels(mask))
    v, u = np.nonzero(mask)
    observed_centroid = camera.to_world(np.column_stack([u, v]).mean(axis=0))

    spacing = template_spacing or camera.scale
    tmpl = resample_equidistant(template.contour, min(spacing, template.contour_length / 8))
    tmpl_centroid = template.centroid
    centered = tmpl - tmpl_centroid
    tree_obs = cKDTree(boundary)

    def cost(theta_deg, symmetric=True):
        rotated = centered @ geometry.rotation(math.radians(theta_deg)).T + observed_centroid
        d_tmpl, _ = tree_obs.query(rotated)
        if not symmetric:
            return d_tmpl.mean()
        d_obs, _ = cKDTree(rotated).query(boundary)
        return 0.5 * (d_obs.mean() + d_tmpl.mean())

    coarse = np.arange(360.0)
    costs = np.array([cost(a, symmetric=False) for a in coarse])
    best = coarse[int(np.argmin(costs))]
    theta_deg = _golden_section(cost, best - 1.0, best + 1.0, 0.05)
    mean_dist = cost(theta_deg)
    theta = math.radians(theta_deg)
    theta = math.atan2(math.sin(theta), math.cos(theta))
    R = geometry.rotation(theta)
    t = observed_centroid - R @ tmpl_centroid
    pose = (float(t[0]), float(t[1]), theta)

    grasp = observed_centroid
    posed = geometry.transform_points(template.contour, pose)
    if not geometry.points_in_polygon(grasp[None, :], posed)[0]:
        # non-convex garment: move to the most interior mask pixel nearest the centroid
        depth = ndimage.distance_transform_edt(mask)
        candidates = np.column_stack(np.nonzero(depth >= max(2.0, 0.25 * depth.max())))
        uv = candidates[:, ::-1].astype(float)
        world = camera.to_world(uv)
        grasp = world[np.argmin(np.hypot(*(world - observed_centroid).T))]
    return PoseEstimate(pose[0], pose[1], pose[2], (float(grasp[0]), float(grasp[1])),
                        float(1.0 / (1.0 + mean_dist)))


class GarmentPoseEstimator(BaseEstimator):
    """``fit(background)`` stores the empty-table frame; ``predict(frames)`` estimates poses."""

    def __init__(self, template=None, camera=None, threshold=BACKGROUND_THRESHOLD):
        self.template = template
        self.camera = camera
        self.threshold = threshold

    def fit(self, X, y=None):
        self.background_ = GrayImage(getattr(X, "pixels", X))
        return self

    def predict(self, X):
        check_is_fitted(self, "background_")
        frames = [X] if isinstance(X, GrayImage) or np.ndim(X) == 2 else X
        return [estimate_pose(f, self.background_, self.template, self.camera, self.threshold)
                for f in frames]
