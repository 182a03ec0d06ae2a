"""Forward models: dense matrix operators, parallel-beam Radon transform with
FBP, the grid Laplacian, and a synthetic EMT-like sensitivity operator.

Every operator carries an exact matched adjoint: the adjoint applies the
transpose of the same interpolation/stencil weights as the forward map, never
an independent discretization.  Solvers and gradient checks rely on the
adjoint identity <Ax, y> = <x, A^T y> holding to near machine precision.
"""

import math

import numpy as np

from . import _kernels
from .errors import ConditioningError, FormatError, ShapeError


class LinearOperator:
    """Abstract linear map between a shaped input and a shaped output.

    Subclasses implement apply/adjoint on arrays of shape in_shape/out_shape.
    The *_vec and *_batch helpers work on flattened vectors, which is what
    the iterative solvers and the training loop use.
    """

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)

    @property
    def in_size(self):
        return int(np.prod(self.in_shape))

    @property
    def out_size(self):
        return int(np.prod(self.out_shape))

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def _check_in(self, x):
        if x.shape != self.in_shape:
            raise ShapeError("operator input %r, expected %r" % (x.shape, self.in_shape))

    def _check_out(self, y):
        if y.shape != self.out_shape:
            raise ShapeError("operator output %r, expected %r" % (y.shape, self.out_shape))

    def apply_vec(self, xflat):
        xflat = np.asarray(xflat, dtype=np.float64)
        if xflat.shape != (self.in_size,):
            raise ShapeError("expected flat input of length %d" % self.in_size)
        return self.apply(xflat.reshape(self.in_shape)).ravel()

    def adjoint_vec(self, yflat):
        yflat = np.asarray(yflat, dtype=np.float64)
        if yflat.shape != (self.out_size,):
            raise ShapeError("expected flat input of length %d" % self.out_size)
        return self.adjoint(yflat.reshape(self.out_shape)).ravel()

    def apply_batch(self, X):
        return np.stack([self.apply_vec(row) for row in X])

    def adjoint_batch(self, Y):
        return np.stack([self.adjoint_vec(row) for row in Y])


class MatrixOperator(LinearOperator):
    """Dense matrix forward model."""

    def __init__(self, A, in_shape=None, out_shape=None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ShapeError("matrix operator needs a 2-D matrix, got %r" % (A.shape,))
        if not np.all(np.isfinite(A)):
            raise ShapeError("matrix operator entries must be finite")
        N, M = A.shape
        in_shape = (M,) if in_shape is None else tuple(in_shape)
        out_shape = (N,) if out_shape is None else tuple(out_shape)
        if int(np.prod(in_shape)) != M or int(np.prod(out_shape)) != N:
            raise ShapeError("in/out shapes do not match matrix dims %r" % (A.shape,))
        super().__init__(in_shape, out_shape)
        self.matrix = A

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check_in(x)
        return (self.matrix @ x.ravel()).reshape(self.out_shape)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        self._check_out(y)
        return (self.matrix.T @ y.ravel()).reshape(self.in_shape)

    def apply_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        batch = X.shape[0]
        out = X.reshape(batch, self.in_size) @ self.matrix.T
        return out.reshape((batch,) + self.out_shape)

    def adjoint_batch(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        batch = Y.shape[0]
        out = Y.reshape(batch, self.out_size) @ self.matrix
        return out.reshape((batch,) + self.in_shape)


def matrix_operator(A, in_shape=None, out_shape=None):
    return MatrixOperator(A, in_shape=in_shape, out_shape=out_shape)


class RadonGeometry:
    """Parallel-beam acquisition geometry.

    Views are evenly spaced over [0, pi).  Detector bins are centered on the
    rotation axis; n_detectors must cover the image diagonal so every pixel
    projects inside the detector row at every angle.
    """

    def __init__(self, image_size, n_views, n_detectors=None, detector_spacing=1.0):
        if image_size < 2:
            raise ShapeError("image_size must be >= 2")
        if n_views < 1:
            raise ShapeError("n_views must be >= 1")
        min_det = math.ceil(image_size * math.sqrt(2.0))
        if n_detectors is None:
            n_detectors = min_det
        if n_detectors < min_det:
            raise ShapeError(
                "n_detectors=%d does not cover the image diagonal (need >= %d)"
                % (n_detectors, min_det)
            )
        if detector_spacing <= 0:
            raise ShapeError("detector_spacing must be positive")
        self.image_size = int(image_size)
        self.n_views = int(n_views)
        self.n_detectors = int(n_detectors)
        self.detector_spacing = float(detector_spacing)
        self.angles = np.arange(self.n_views) * (np.pi / self.n_views)
        self._bin0, self._frac = self._interp_tables()

    def _interp_tables(self):
        """Per-view linear-interpolation targets for every pixel.

        Pixel (row i, col j) sits at (xc, yc) = (j - c, i - c) with
        c = (S-1)/2; its projection onto the detector at angle t is
        xc*cos(t) + yc*sin(t); that coordinate is split between the two
        adjacent detector bins.  The same tables drive forward and adjoint,
        which is what makes the pair exactly matched.
        """
        S, P = self.image_size, self.n_detectors
        c = (S - 1) / 2.0
        grid = np.arange(S, dtype=np.float64) - c
        xc = np.broadcast_to(grid[None, :], (S, S)).ravel()
        yc = np.broadcast_to(grid[:, None], (S, S)).ravel()
        bin0 = np.empty((self.n_views, S * S), dtype=np.int64)
        frac = np.empty((self.n_views, S * S))
        for v, theta in enumerate(self.angles):
            t = xc * np.cos(theta) + yc * np.sin(theta)
            u = t / self.detector_spacing + (P - 1) / 2.0
            if u.min() < -1e-9 or u.max() > P - 1 + 1e-9:
                raise ShapeError("detector row does not cover the image")
            i0 = np.clip(np.floor(u).astype(np.int64), 0, P - 2)
            bin0[v] = i0
            frac[v] = u - i0
        return bin0, frac

    def __eq__(self, other):
        return isinstance(other, RadonGeometry) and (
            self.image_size == other.image_size
            and self.n_views == other.n_views
            and self.n_detectors == other.n_detectors
            and self.detector_spacing == other.detector_spacing
        )


def save_geometry(path, geom):
    with open(path, "w") as fh:
        fh.write("image_size=%d\n" % geom.image_size)
        fh.write("n_views=%d\n" % geom.n_views)
        fh.write("n_detectors=%d\n" % geom.n_detectors)
        fh.write("detector_spacing=%.17g\n" % geom.detector_spacing)


def load_geometry(path):
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError("%s: bad geometry line %r" % (path, line))
            key, val = line.split("=", 1)
            fields[key.strip()] = val.strip()
    try:
        return RadonGeometry(
            image_size=int(fields["image_size"]),
            n_views=int(fields["n_views"]),
            n_detectors=int(fields["n_detectors"]),
            detector_spacing=float(fields["detector_spacing"]),
        )
    except KeyError as exc:
        raise FormatError("%s: missing geometry key %s" % (path, exc)) from exc


def radon_apply(geom, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (geom.image_size, geom.image_size):
        raise ShapeError("image shape %r does not match geometry" % (x.shape,))
    return _kernels.radon_fwd(
        np.ascontiguousarray(x).ravel(), geom._bin0, geom._frac, geom.n_detectors
    )


def radon_adjoint(geom, sino):
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != (geom.n_views, geom.n_detectors):
        raise ShapeError("sinogram shape %r does not match geometry" % (sino.shape,))
    S = geom.image_size
    img = _kernels.radon_adj(sino, geom._bin0, geom._frac, S * S)
    return img.reshape(S, S)


class RadonOperator(LinearOperator):
    def __init__(self, geom):
        super().__init__(
            (geom.image_size, geom.image_size), (geom.n_views, geom.n_detectors)
        )
        self.geometry = geom

    def apply(self, x):
        return radon_apply(self.geometry, np.asarray(x, dtype=np.float64))

    def adjoint(self, y):
        return radon_adjoint(self.geometry, np.asarray(y, dtype=np.float64))


def radon_operator(geom):
    return RadonOperator(geom)


def fbp_reconstruct(geom, sino):
    """Filtered back projection: ramp filter in Fourier domain, then the
    matched backprojector, scaled by pi / (2 * n_views)."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != (geom.n_views, geom.n_detectors):
        raise ShapeError("sinogram shape %r does not match geometry" % (sino.shape,))
    if geom.n_views < 2:
        raise ShapeError("FBP needs at least 2 views")
    P = geom.n_detectors
    npad = 1
    while npad < 2 * P:
        npad *= 2
    ramp = 2.0 * np.abs(np.fft.rfftfreq(npad, d=geom.detector_spacing))
    spec = np.fft.rfft(sino, n=npad, axis=1) * ramp[None, :]
    filtered = np.fft.irfft(spec, n=npad, axis=1)[:, :P]
    img = radon_adjoint(geom, filtered)
    return img * (np.pi / (2.0 * geom.n_views))


class LaplacianOperator(LinearOperator):
    """5-point grid Laplacian with mirrored (Neumann) boundaries.

    Equivalent to the graph Laplacian of the 4-neighbor grid: boundary rows
    lose the out-of-bounds neighbors, so rows sum to zero and the matrix is
    symmetric positive semidefinite (null space = constants).
    """

    def __init__(self, height, width):
        if height < 2 or width < 2:
            raise ShapeError("laplacian needs height, width >= 2")
        super().__init__((height, width), (height, width))

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check_in(x)
        xp = np.pad(x, 1, mode="edge")
        return 4.0 * x - xp[:-2, 1:-1] - xp[2:, 1:-1] - xp[1:-1, :-2] - xp[1:-1, 2:]

    def adjoint(self, y):
        return self.apply(y)  # symmetric


def laplacian_operator(height, width):
    return LaplacianOperator(height, width)


def operator_to_dense(op):
    """Assemble the dense matrix of any operator (tests/small sizes only)."""
    A = np.empty((op.out_size, op.in_size))
    e = np.zeros(op.in_size)
    for j in range(op.in_size):
        e[j] = 1.0
        A[:, j] = op.apply_vec(e)
        e[j] = 0.0
    return A


def synth_emt_operator(rng, n_meas, image_size, target_condition=100.0):
    """Synthetic EMT-like sensitivity operator.

    Rows are smooth sensitivity maps for coil pairs placed on a circle just
    inside the image boundary: each map is a sum of Gaussian blobs strung
    along the chord between the two coils (wider near mid-chord), with small
    seeded positional jitter.  The singular spectrum is then reshaped by a
    power law so the largest/smallest singular-value ratio equals
    target_condition and the largest singular value is 1.
    """
    if n_meas >= image_size * image_size:
        raise ShapeError("n_meas must be smaller than the pixel count")
    if n_meas < 1:
        raise ShapeError("n_meas must be >= 1")
    if target_condition < 1.0:
        raise ConditioningError("target_condition must be >= 1")
    S = image_size
    n_coils = math.ceil(math.sqrt(n_meas))
    center = (S - 1) / 2.0
    radius = 0.48 * S
    coil_angles = 2.0 * np.pi * np.arange(n_coils) / n_coils
    coils = np.stack(
        [center + radius * np.cos(coil_angles), center + radius * np.sin(coil_angles)],
        axis=1,
    )
    cols = np.arange(S, dtype=np.float64)[None, :]
    rows = np.arange(S, dtype=np.float64)[:, None]
    n_blobs = 9
    tau = np.linspace(0.0, 1.0, n_blobs)
    sigma0 = S / 10.0
    R = np.empty((n_meas, S * S))
    m = 0
    for i in range(n_coils):
        for j in range(n_coils):
            if m == n_meas:
                break
            p, q = coils[i], coils[j]
            smap = np.zeros((S, S))
            for g in range(n_blobs):
                cx = (1.0 - tau[g]) * p[0] + tau[g] * q[0] + 0.5 * rng.normal()
                cy = (1.0 - tau[g]) * p[1] + tau[g] * q[1] + 0.5 * rng.normal()
                sig = sigma0 * (0.5 + 2.0 * tau[g] * (1.0 - tau[g]))
                d2 = (cols - cx) ** 2 + (rows - cy) ** 2
                smap += np.exp(-0.5 * d2 / (sig * sig))
            R[m] = (smap / n_blobs).ravel()
            m += 1
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    if s[-1] <= s[0] * 1e-13 or s[0] <= 0.0:
        raise ConditioningError("raw sensitivity matrix is numerically rank-deficient")
    raw_ratio = s[0] / s[-1]
    if raw_ratio <= 1.0 + 1e-12:
        raise ConditioningError("degenerate singular spectrum, cannot reshape")
    b = math.log(target_condition) / math.log(raw_ratio) if target_condition > 1.0 else 0.0
    s_new = (s / s[0]) ** b
    achieved = s_new[0] / s_new[-1]
    if not (target_condition / 2.0 <= achieved <= 2.0 * target_condition):
        raise ConditioningError(
            "conditioning target %g not reachable (achieved %g)"
            % (target_condition, achieved)
        )
    A = (U * s_new) @ Vt
    return MatrixOperator(A, in_shape=(S, S), out_shape=(n_meas,))
