"""Grayscale frame-sequence videos: PGM I/O, synthetic datasets, perturbations.

A video on disk is a directory of ``frame_%06d.pgm`` files (binary P5,
maxval 255).  A dataset manifest is a CSV with header ``path,label,group``;
relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FRAME_PATTERN = "frame_%06d.pgm"
MIN_FRAMES = 3


class VideoError(ValueError):
    pass


@dataclass(frozen=True)
class Video:
    """Ordered stack of ``T`` grayscale frames, stored as a read-only
    float64 array of shape ``(T, r, c)`` with values in [0, 255]."""

    frames: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise VideoError(f"frames must be a (T, r, c) stack, got shape {frames.shape}")
        if frames.shape[0] < MIN_FRAMES:
            raise VideoError(f"video needs at least {MIN_FRAMES} frames, got {frames.shape[0]}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


# -- PGM ---------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """Return the first ``count`` header tokens and the offset of the raster."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise VideoError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise VideoError(f"{path}: not a binary P5 PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise VideoError(f"{path}: malformed PGM header") from None
    if maxval > 255 or maxval <= 0:
        raise VideoError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset) \
        if len(data) - offset >= width * height else None
    if raster is None:
        raise VideoError(f"{path}: truncated raster")
    return raster.reshape(height, width)


def write_pgm(path, image) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    r, c = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (c, r))
        fh.write(img.tobytes())


def load_video(path) -> Video:
    """Load a directory of P5 PGM frames in lexicographic filename order."""
    path = Path(path)
    if not path.is_dir():
        raise VideoError(f"video directory not found: {path}")
    names = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
    if len(names) < MIN_FRAMES:
        raise VideoError(f"{path}: needs at least {MIN_FRAMES} frames, found {len(names)}")
    frames = []
    for name in names:
        img = read_pgm(name)
        if frames and img.shape != frames[0].shape:
            raise VideoError(
                f"{name}: frame dimensions {img.shape} differ from first frame {frames[0].shape}")
        frames.append(img)
    return Video(np.stack(frames))


def save_video(video: Video, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(video.frames):
        write_pgm(path / (FRAME_PATTERN % t), frame)


# -- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    group: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    root: str = "."

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len({e.label for e in self.entries}) < 2:
            raise VideoError("manifest needs at least 2 distinct labels")

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return sorted({e.label for e in self.entries})

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else Path(self.root) / p


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise VideoError(f"{path}: manifest header must be path,label,group")
        entries = [ManifestEntry(row["path"], row["label"], row.get("group") or None)
                   for row in reader]
    return DatasetManifest(entries, root=str(path.parent))


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "group"])
        for e in manifest.entries:
            w.writerow([e.path, e.label, e.group or ""])


# -- synthetic data ----------------------------------------------------------

PATTERNS = ("horizontal", "vertical", "orbit", "pulse", "drift", "flicker")


def _gaussian_blob(yy, xx, cy, cx, sy, sx, theta=0.0):
    dy, dx = yy - cy, xx - cx
    ct, st = math.cos(theta), math.sin(theta)
    a = ct * dx + st * dy
    b = -st * dx + ct * dy
    return np.exp(-0.5 * ((a / sx) ** 2 + (b / sy) ** 2))


def _render_clip(pattern, rng, size, n_frames, speed):
    r = c = size
    yy, xx = np.mgrid[0:r, 0:c].astype(np.float64)
    phase = rng.uniform(0, 2 * math.pi)
    cy0 = (r - 1) / 2 + rng.uniform(-2, 2)
    cx0 = (c - 1) / 2 + rng.uniform(-2, 2)
    rate = speed * rng.uniform(0.9, 1.1)
    peak = rng.uniform(225, 250)
    noise = rng.uniform(0, 6, size=(n_frames, r, c))
    frames = np.empty((n_frames, r, c))
    for t in range(n_frames):
        sy = sx = 2.6
        theta = 0.0
        gain = 1.0
        cy, cx = cy0, cx0
        if pattern == "horizontal":
            cx = cx0 + 6.0 * math.sin(phase + 0.22 * rate * t)
        elif pattern == "vertical":
            cy = cy0 + 6.0 * math.sin(phase + 0.22 * rate * t)
        elif pattern == "orbit":
            # elongated blob circling the centre, long axis kept tangent
            ang = phase + 0.16 * rate * t
            cy = cy0 + 3.0 * math.sin(ang)
            cx = cx0 + 3.0 * math.cos(ang)
            sy, sx = 1.8, 6.0
            theta = ang + math.pi / 2
        elif pattern == "pulse":
            s = 2.6 + 1.3 * math.sin(phase + 0.35 * rate * t)
            sy = sx = s
        elif pattern == "drift":
            span = 0.8 * rate * t - 0.4 * rate * n_frames
            cy, cx = cy0 + span * 0.7, cx0 + span * 0.7
        elif pattern == "flicker":
            gain = 0.7 + 0.3 * math.sin(phase + 0.9 * rate * t)
        else:
            raise VideoError(f"unknown pattern {pattern!r}")
        frames[t] = peak * gain * _gaussian_blob(yy, xx, cy, cx, sy, sx, theta)
    return np.clip(frames + noise, 0, 255)


def synthesize_dataset(num_classes: int, videos_per_class: int, seed: int, out_dir,
                       size: int = 40, n_frames: int = 16) -> DatasetManifest:
    """Write a synthetic motion dataset to ``out_dir`` and return its manifest.

    Each class is a bright blob on a dark background following one motion
    pattern from :data:`PATTERNS` (classes beyond six reuse a pattern at a
    faster rate).  Videos within a class differ in phase, position, rate and
    background noise, all drawn from ``numpy.random.default_rng(seed)``.
    The manifest is also written to ``out_dir/manifest.csv``; the group
    column holds the within-class video index, so ``per_group`` folds
    behave like leave-one-subject-out.
    """
    if num_classes < 2 or videos_per_class < 2:
        raise VideoError("need num_classes >= 2 and videos_per_class >= 2")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise VideoError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise VideoError(f"output directory not writable: {out}")
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(num_classes):
        pattern = PATTERNS[k % len(PATTERNS)]
        speed = 1.0 + 0.5 * (k // len(PATTERNS))
        label = f"{k:02d}_{pattern}"
        for j in range(videos_per_class):
            frames = _render_clip(pattern, rng, size, n_frames, speed)
            rel = f"{label}/v{j:03d}"
            save_video(Video(frames), out / rel)
            entries.append(ManifestEntry(rel, label, f"s{j:03d}"))
    manifest = DatasetManifest(entries, root=str(out))
    write_manifest(manifest, out / "manifest.csv")
    return manifest


# -- perturbations -----------------------------------------------------------

def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class Perturbation:
    kind: str
    scale_factor: float = 1.0
    shift_x: float = 0.0
    shift_y: float = 0.0

    def __post_init__(self):
        if self.kind not in ("scale", "translate"):
            raise VideoError(f"unknown perturbation kind {self.kind!r}")
        if not 0.5 <= self.scale_factor <= 2.0:
            raise VideoError(f"scale_factor {self.scale_factor} outside [0.5, 2.0]")
        if abs(self.shift_x) > 0.5 or abs(self.shift_y) > 0.5:
            raise VideoError("shifts must lie within [-0.5, 0.5]")

    @classmethod
    def scale(cls, factor):
        return cls("scale", scale_factor=float(factor))

    @classmethod
    def translate(cls, shift_x, shift_y=None):
        return cls("translate", shift_x=float(shift_x),
                   shift_y=float(shift_x if shift_y is None else shift_y))

    @property
    def is_identity(self) -> bool:
        if self.kind == "scale":
            return self.scale_factor == 1.0
        return self.shift_x == 0.0 and self.shift_y == 0.0

    def tag(self) -> str:
        if self.kind == "scale":
            return f"scale={self.scale_factor:g}"
        return f"shift={self.shift_x:g},{self.shift_y:g}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale_factor": self.scale_factor,
                "shift_x": self.shift_x, "shift_y": self.shift_y}


def _translate_frames(frames, dy, dx):
    _, r, c = frames.shape
    rows = np.clip(np.arange(r) - dy, 0, r - 1)
    cols = np.clip(np.arange(c) - dx, 0, c - 1)
    return frames[:, rows][:, :, cols]


def _axis_samples(n, s):
    centre = (n - 1) / 2.0
    src = centre + (np.arange(n) - centre) / s
    # clamping is the nearest-row/column fill for shrinkage
    src = np.clip(src, 0.0, n - 1.0)
    lo = np.minimum(np.floor(src).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, src - lo


def _scale_frames(frames, s):
    _, r, c = frames.shape
    r0, r1, fy = _axis_samples(r, s)
    c0, c1, fx = _axis_samples(c, s)
    fy = fy[:, None]
    top = frames[:, r0][:, :, c0] * (1 - fx) + frames[:, r0][:, :, c1] * fx
    bot = frames[:, r1][:, :, c0] * (1 - fx) + frames[:, r1][:, :, c1] * fx
    return top * (1 - fy) + bot * fy


def apply_perturbation(v: Video, p: Perturbation) -> Video:
    """Shift or rescale every frame, keeping the frame size.

    Translation moves content by ``round(shift_x * c)`` columns and
    ``round(shift_y * r)`` rows (half away from zero); vacated pixels copy
    the nearest retained row/column.  Scaling resamples bilinearly about the
    frame centre; shrinkage replicates the border rows/columns, and
    magnification crops.
    """
    if not isinstance(p, Perturbation):
        raise VideoError("expected a Perturbation")
    if p.kind == "translate":
        _, r, c = v.frames.shape
        out = _translate_frames(v.frames, round_half_away(p.shift_y * r),
                                round_half_away(p.shift_x * c))
    else:
        out = _scale_frames(v.frames, p.scale_factor)
    return Video(out, frame_rate=v.frame_rate)


def parse_range(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (inclusive stop) into a list of floats."""
    parts = [float(x) for x in spec.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) != 3 or parts[2] <= 0:
        raise ValueError(f"range must be start:stop:step with step > 0, got {spec!r}")
    start, stop, step = parts
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(max(n, 0))]
