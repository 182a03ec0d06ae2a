"""Synthetic ground truth and measurement simulation.

Circle phantoms mimic conductivity maps (a few round inclusions inside a
circular sensing region), ellipse phantoms are a stand-in for tomographic
slices.  Noise is added at an exactly realized SNR so evaluation sweeps are
reproducible to the bit.
"""

import dataclasses
import math
import os

import numpy as np

from .errors import FormatError, GenerationError
from .rng import Rng
from .tensor import read_tensor, write_tensor


@dataclasses.dataclass
class CirclePhantomSpec:
    """Sampling ranges for random circle phantoms.

    n_objects lists the allowed disc counts; one entry is drawn uniformly per
    phantom.  radius_range is a fraction of the image side.  Discs are kept
    fully inside the inscribed sensing disc, and pairwise disjoint when
    non_overlap is set.
    """

    n_objects: tuple = (1, 2, 4)
    radius_range: tuple = (0.08, 0.18)
    value_range: tuple = (0.05, 0.5)
    non_overlap: bool = True
    max_attempts: int = 10000


@dataclasses.dataclass
class DatasetSample:
    measurement: np.ndarray
    ground_truth: np.ndarray
    meta: dict


def _uniform_in(rng, lo, hi):
    return lo + (hi - lo) * rng.uniform()


def gen_circle_phantom(rng, spec, size):
    """Random discs on a zero background, fully inside the sensing disc.

    Returns an image with the last drawn disc painted on top wherever
    overlaps are allowed.  Raises GenerationError if rejection sampling
    cannot place all discs within spec.max_attempts draws.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    if not spec.n_objects:
        raise ValueError("spec.n_objects must be non-empty")
    count = spec.n_objects[rng.integer_below(len(spec.n_objects))]

    c = (size - 1) / 2.0
    # leave a one pixel margin so boundary pixels are always background
    sensing_radius = size / 2.0 - 1.0

    placed = []  # (cy, cx, r, value)
    attempts = 0
    while len(placed) < count:
        if attempts >= spec.max_attempts:
            raise GenerationError(
                "could not place %d discs after %d attempts" % (count, attempts)
            )
        attempts += 1
        r = _uniform_in(rng, spec.radius_range[0], spec.radius_range[1]) * size
        value = _uniform_in(rng, spec.value_range[0], spec.value_range[1])
        cy = _uniform_in(rng, 0.0, size - 1.0)
        cx = _uniform_in(rng, 0.0, size - 1.0)
        if math.hypot(cy - c, cx - c) + r > sensing_radius:
            continue
        if spec.non_overlap:
            ok = all(
                math.hypot(cy - py, cx - px) >= r + pr for py, px, pr, _ in placed
            )
            if not ok:
                continue
        placed.append((cy, cx, r, value))

    img = np.zeros((size, size), dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for cy, cx, r, value in placed:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[mask] = value
    return img


def gen_ellipse_phantom(rng, n_ellipses, size):
    """Sum of random ellipses, clipped to [0, 1]."""
    if size < 32:
        raise ValueError("size must be >= 32")
    img = np.zeros((size, size), dtype=np.float64)
    if n_ellipses == 0:
        return img
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(n_ellipses):
        cy = c + _uniform_in(rng, -0.3, 0.3) * size
        cx = c + _uniform_in(rng, -0.3, 0.3) * size
        a = _uniform_in(rng, 0.08, 0.30) * size
        b = _uniform_in(rng, 0.08, 0.30) * size
        phi = rng.uniform() * math.pi
        value = _uniform_in(rng, 0.2, 0.8)
        dy = yy - cy
        dx = xx - cx
        u = dx * math.cos(phi) + dy * math.sin(phi)
        v = -dx * math.sin(phi) + dy * math.cos(phi)
        img += value * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
    return np.clip(img, 0.0, 1.0)


def add_noise_snr(rng, b, snr_db):
    """Add white Gaussian noise at an exactly realized SNR.

    The drawn noise vector is rescaled so that 10*log10(||b||^2/||eps||^2)
    equals snr_db by construction.  snr_db = inf is the no-noise sentinel.
    """
    b = np.asarray(b, dtype=np.float64)
    if snr_db is None or math.isinf(snr_db):
        return b.copy()
    signal = float(np.linalg.norm(b))
    if signal == 0.0:
        raise GenerationError("cannot set an SNR on a zero measurement vector")
    eps = rng.normal(b.shape)
    eps_norm = float(np.linalg.norm(eps))
    if eps_norm == 0.0:
        raise GenerationError("degenerate zero noise draw")
    scale = signal * 10.0 ** (-snr_db / 20.0) / eps_norm
    return b + scale * eps


def circle_source(spec, size):
    """Phantom source for build_dataset: random circle phantoms."""

    def make(child_rng):
        count = spec.n_objects[child_rng.integer_below(len(spec.n_objects))]
        sub = dataclasses.replace(spec, n_objects=(count,))
        img = gen_circle_phantom(child_rng, sub, size)
        return img, {"n_objects": int(count)}

    return make


def ellipse_source(n_ellipses, size):
    """Phantom source for build_dataset: random ellipse phantoms."""

    def make(child_rng):
        img = gen_ellipse_phantom(child_rng, n_ellipses, size)
        return img, {"n_objects": int(n_ellipses)}

    return make


def build_dataset(rng, op, phantom_source, n_samples, snr_db):
    """Generate (measurement, ground truth) pairs through a forward operator.

    Each sample uses its own child stream rng.spawn(i), so the dataset is
    deterministic under the master seed and samples are independent.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = []
    for i in range(n_samples):
        child = rng.spawn(i)
        img, meta = phantom_source(child)
        b_clean = op.apply(img)
        b = add_noise_snr(child, b_clean, snr_db)
        meta = dict(meta)
        meta["snr_db"] = float(snr_db) if snr_db is not None else math.inf
        meta["seed"] = child.seed
        samples.append(DatasetSample(measurement=b, ground_truth=img, meta=meta))
    return samples


def save_dataset(dirpath, samples):
    """Write samples as FTNS pairs plus a greppable manifest."""
    os.makedirs(dirpath, exist_ok=True)
    lines = ["n_samples=%d" % len(samples)]
    for i, s in enumerate(samples):
        b_name = "sample_%05d_b.ftns" % i
        x_name = "sample_%05d_x.ftns" % i
        write_tensor(os.path.join(dirpath, b_name), s.measurement)
        write_tensor(os.path.join(dirpath, x_name), s.ground_truth)
        lines.append(
            "%s %s n_objects=%d snr_db=%s seed=%d"
            % (
                b_name,
                x_name,
                s.meta.get("n_objects", 0),
                repr(float(s.meta.get("snr_db", math.inf))),
                s.meta.get("seed", 0),
            )
        )
    with open(os.path.join(dirpath, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(dirpath):
    """Inverse of save_dataset; validates the manifest before reading."""
    manifest = os.path.join(dirpath, "manifest.txt")
    if not os.path.isfile(manifest):
        raise FormatError("missing manifest: %s" % manifest)
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("n_samples="):
        raise FormatError("manifest header must be n_samples=<count>")
    try:
        declared = int(lines[0].split("=", 1)[1])
    except ValueError:
        raise FormatError("bad manifest header: %r" % lines[0])
    entries = lines[1:]
    if len(entries) != declared:
        raise FormatError(
            "manifest count mismatch: header says %d, found %d entries"
            % (declared, len(entries))
        )
    samples = []
    for ln in entries:
        parts = ln.split()
        if len(parts) < 2:
            raise FormatError("bad manifest line: %r" % ln)
        b_name, x_name = parts[0], parts[1]
        meta = {}
        for kv in parts[2:]:
            if "=" not in kv:
                raise FormatError("bad manifest field: %r" % kv)
            key, val = kv.split("=", 1)
            if key == "snr_db":
                meta[key] = float(val)
            else:
                meta[key] = int(val)
        b = read_tensor(os.path.join(dirpath, b_name))
        x = read_tensor(os.path.join(dirpath, x_name))
        samples.append(DatasetSample(measurement=b, ground_truth=x, meta=meta))
    return samples
