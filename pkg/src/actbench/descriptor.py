"""Per-pixel 14-dimensional motion/appearance features.

Layout of every feature row::

    [x, y, |Jx|, |Jy|, |Jyy|, |Jxx|, |grad|, orientation,
     u, v, du/dt, dv/dt, divergence, vorticity]

Spatial derivatives are central differences with replicated borders; the
optical flow is Horn-Schunck.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .videoio import Video

FEATURE_DIM = 14
DEFAULT_TAU = 40.0
HS_ALPHA = 10.0
HS_ITERATIONS = 100

FEATURE_NAMES = (
    "x", "y", "abs_jx", "abs_jy", "abs_jyy", "abs_jxx", "grad_mag", "grad_orient",
    "u", "v", "du_dt", "dv_dt", "divergence", "vorticity",
)


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSet:
    """Pooled feature rows of one video, ``vectors`` has shape ``(N, d)``."""

    vectors: np.ndarray
    r: int = 0
    c: int = 0
    T: int = 0

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=np.float64)
        if vec.ndim != 2:
            raise DescriptorError(f"feature vectors must be (N, d), got {vec.shape}")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def as_array(fs) -> np.ndarray:
    if isinstance(fs, FeatureSet):
        return fs.vectors
    arr = np.asarray(fs, dtype=np.float64)
    if arr.ndim != 2:
        raise DescriptorError(f"expected an (N, d) array, got shape {arr.shape}")
    return arr


def _dx(a):
    p = np.pad(a, ((0, 0), (1, 1)), mode="edge")
    return (p[:, 2:] - p[:, :-2]) / 2.0


def _dy(a):
    p = np.pad(a, ((1, 1), (0, 0)), mode="edge")
    return (p[2:, :] - p[:-2, :]) / 2.0


def compute_gradients(frame):
    """Return ``(Jx, Jy, Jxx, Jyy)`` for a 2-D image.

    ``Jxx`` and ``Jyy`` are the central difference of ``Jx`` and ``Jy``.
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise DescriptorError(f"frame must be at least 3x3, got {img.shape}")
    jx = _dx(img)
    jy = _dy(img)
    return jx, jy, _dx(jx), _dy(jy)


def _neighbour_average(a):
    p = np.pad(a, 1, mode="edge")
    edge = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    corner = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return edge / 6.0 + corner / 12.0


def compute_flow(prev, next, alpha: float = HS_ALPHA, n_iter: int = HS_ITERATIONS):
    """Horn-Schunck optical flow from ``prev`` to ``next``.

    Spatial gradients are taken on the mean of the two frames, so swapping
    the frames negates the flow exactly.
    """
    i0 = np.asarray(prev, dtype=np.float64)
    i1 = np.asarray(next, dtype=np.float64)
    if i0.shape != i1.shape:
        raise DescriptorError(f"frame shapes differ: {i0.shape} vs {i1.shape}")
    mean = 0.5 * (i0 + i1)
    ix, iy = _dx(mean), _dy(mean)
    it = i1 - i0
    denom = alpha ** 2 + ix ** 2 + iy ** 2
    u = np.zeros_like(mean)
    v = np.zeros_like(mean)
    for _ in range(n_iter):
        ub = _neighbour_average(u)
        vb = _neighbour_average(v)
        t = (ix * ub + iy * vb + it) / denom
        u = ub - ix * t
        v = vb - iy * t
    return u, v


def _frame_features(frame, flow, prev_flow, tau):
    jx, jy, jxx, jyy = compute_gradients(frame)
    mag = np.sqrt(jx ** 2 + jy ** 2)
    mask = mag > tau
    if not mask.any():
        return np.empty((0, FEATURE_DIM))
    ax, ay = np.abs(jx), np.abs(jy)
    with np.errstate(divide="ignore", invalid="ignore"):
        orient = np.where(ax == 0, np.pi / 2, np.arctan(ay / ax))
    u, v = flow
    du = u - prev_flow[0]
    dv = v - prev_flow[1]
    div = _dx(u) + _dy(v)
    vort = _dx(v) - _dy(u)
    ys, xs = np.nonzero(mask)
    cols = [xs.astype(np.float64), ys.astype(np.float64)]
    for m in (ax, ay, np.abs(jyy), np.abs(jxx), mag, orient, u, v, du, dv, div, vort):
        cols.append(m[mask])
    return np.column_stack(cols)


def extract_features(v: Video, tau: float = DEFAULT_TAU, alpha: float = HS_ALPHA,
                     n_iter: int = HS_ITERATIONS, min_count: int | None = FEATURE_DIM + 1
                     ) -> FeatureSet:
    """Pool the features of frames 3..T whose gradient magnitude exceeds ``tau``.

    Frames 1 and 2 emit nothing: the temporal flow derivative at frame t is
    the difference of the flow fields (t-1 -> t) and (t-2 -> t-1).

    Raises
    ------
    DescriptorError
        If the video has fewer than three frames or no more than
        ``min_count - 1`` features survive the threshold.  Pass
        ``min_count=None`` to accept any count.
    """
    frames = v.frames
    T, r, c = frames.shape
    if T < 3:
        raise DescriptorError("need at least 3 frames")
    prev_flow = compute_flow(frames[0], frames[1], alpha, n_iter)
    rows = []
    for t in range(2, T):
        flow = compute_flow(frames[t - 1], frames[t], alpha, n_iter)
        rows.append(_frame_features(frames[t], flow, prev_flow, tau))
        prev_flow = flow
    vectors = np.concatenate(rows, axis=0)
    if min_count is not None and len(vectors) < min_count:
        raise DescriptorError(
            f"only {len(vectors)} feature vectors survive tau={tau}; need at least {min_count}")
    return FeatureSet(vectors, r=r, c=c, T=T)


def write_features_csv(fs: FeatureSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_NAMES)
        for row in fs.vectors:
            w.writerow([repr(float(x)) for x in row])


def read_features_csv(path) -> FeatureSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FeatureSet(data)
