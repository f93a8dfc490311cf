"""Planar transform groups, image warping and warp Jacobians.

Coordinates
-----------
Transforms act on *centred* pixel coordinates ``(x, y)`` where ``x`` runs
along columns, ``y`` along rows, and the origin sits at the frame centre
``((W - 1) / 2, (H - 1) / 2)``. A transform ``T`` attached to image ``I``
maps the aligned (output) frame into ``I``: ``(I o T)(u) = I(T(u))``.
Rotations therefore turn about the image centre and the translation
parameters stay decoupled from the linear part.

Interpolation is Keys cubic convolution by default. It reproduces the image
exactly at integer positions, is C1 everywhere (so analytic Jacobians agree
with finite differences), and its derivative at a grid node equals the
central difference. ``interpolation="bilinear"`` is available as well.
Samples outside the frame read 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateWarpError, InvalidArgumentError, InvalidUpdateError

GROUPS = {"translation": 2, "similarity": 4, "affine": 6, "projective": 8}

_IDENTITY = {
    "translation": (0.0, 0.0),
    "similarity": (1.0, 0.0, 0.0, 0.0),
    "affine": (1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
    "projective": (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
}

DET_MIN = 1e-8
KEYS_A = -0.5


def _check_group(group: str) -> None:
    if group not in GROUPS:
        raise InvalidArgumentError(
            f"unknown transform group {group!r}; expected one of {sorted(GROUPS)}"
        )


def _matrix(group: str, z: np.ndarray) -> np.ndarray:
    if group == "translation":
        tx, ty = z
        return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    if group == "similarity":
        s, th, tx, ty = z
        c, sn = np.cos(th), np.sin(th)
        return np.array([[s * c, -s * sn, tx], [s * sn, s * c, ty], [0.0, 0.0, 1.0]])
    if group == "affine":
        return np.array([[z[0], z[1], z[2]], [z[3], z[4], z[5]], [0.0, 0.0, 1.0]])
    return np.array([[z[0], z[1], z[2]], [z[3], z[4], z[5]], [z[6], z[7], 1.0]])


def _invertibility_problem(M: np.ndarray) -> str | None:
    det2 = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if not np.all(np.isfinite(M)):
        return "transform has non-finite entries"
    if abs(det2) <= DET_MIN:
        return f"linear part is singular (det={det2:.3g})"
    if abs(np.linalg.det(M)) <= DET_MIN:
        return "homography is singular"
    return None


@dataclass(frozen=True)
class TransformParams:
    """Parameter vector ``zeta`` of one planar transform in a named group.

    ========== === ===================================
    group      p   parameters
    ========== === ===================================
    translation 2  (tx, ty)
    similarity  4  (scale, angle [rad], tx, ty)
    affine      6  (a11, a12, tx, a21, a22, ty)
    projective  8  first 8 entries of H, H[2, 2] = 1
    ========== === ===================================
    """

    group: str
    zeta: np.ndarray

    def __post_init__(self):
        _check_group(self.group)
        z = np.array(self.zeta, dtype=float).reshape(-1)
        if z.size != GROUPS[self.group]:
            raise InvalidArgumentError(
                f"{self.group} needs {GROUPS[self.group]} parameters, got {z.size}"
            )
        z.setflags(write=False)
        object.__setattr__(self, "zeta", z)
        problem = _invertibility_problem(_matrix(self.group, z))
        if problem:
            raise InvalidArgumentError(problem)

    @property
    def n_params(self) -> int:
        return GROUPS[self.group]

    @classmethod
    def identity(cls, group: str) -> "TransformParams":
        _check_group(group)
        return cls(group, np.array(_IDENTITY[group]))

    def to_matrix(self) -> np.ndarray:
        return _matrix(self.group, self.zeta)

    @classmethod
    def from_matrix(cls, group: str, M, atol: float = 1e-9) -> "TransformParams":
        """Read parameters back from a 3x3 matrix that lies in ``group``."""
        _check_group(group)
        M = np.asarray(M, dtype=float)
        if M.shape != (3, 3):
            raise InvalidArgumentError("expected a 3x3 matrix")
        if M[2, 2] == 0:
            raise InvalidArgumentError("homogeneous scale H[2, 2] is zero")
        M = M / M[2, 2]
        if group == "translation":
            z = np.array([M[0, 2], M[1, 2]])
        elif group == "similarity":
            s = np.hypot(M[0, 0], M[1, 0])
            z = np.array([s, np.arctan2(M[1, 0], M[0, 0]), M[0, 2], M[1, 2]])
        elif group == "affine":
            z = M[:2, :].reshape(-1).copy()
        else:
            z = M.reshape(-1)[:8].copy()
        out = cls(group, z)
        if not np.allclose(out.to_matrix(), M, atol=atol, rtol=0):
            raise InvalidArgumentError(f"matrix is not a member of the {group} group")
        return out

    def map_points(self, points) -> np.ndarray:
        """Apply the transform to an ``(n, 2)`` array of centred (x, y) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = _map(self.group, self.zeta, pts[:, 0], pts[:, 1])
        return np.stack([x, y], axis=1)


class TransformStack:
    """One :class:`TransformParams` per image, all in the same group."""

    def __init__(self, transforms: Iterable[TransformParams]):
        self.transforms = list(transforms)
        if not self.transforms:
            raise InvalidArgumentError("a transform stack cannot be empty")
        groups = {t.group for t in self.transforms}
        if len(groups) != 1:
            raise InvalidArgumentError(f"mixed transform groups {sorted(groups)}")
        self.group = groups.pop()

    @classmethod
    def identity(cls, group: str, count: int) -> "TransformStack":
        return cls([TransformParams.identity(group)] * count)

    @classmethod
    def from_params(cls, group: str, params) -> "TransformStack":
        """Build from a ``(p, B)`` parameter matrix (one column per image)."""
        params = np.asarray(params, dtype=float)
        return cls(TransformParams(group, params[:, i]) for i in range(params.shape[1]))

    @property
    def params(self) -> np.ndarray:
        """``(p, B)`` parameter matrix."""
        return np.stack([t.zeta for t in self.transforms], axis=1)

    @property
    def n_params(self) -> int:
        return GROUPS[self.group]

    def __len__(self):
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    def __getitem__(self, i):
        return self.transforms[i]

    def __eq__(self, other):
        return (
            isinstance(other, TransformStack)
            and self.group == other.group
            and np.array_equal(self.params, other.params)
        )

    def __repr__(self):
        return f"TransformStack(group={self.group!r}, count={len(self)})"


def compose_update(taus: TransformStack, dtau) -> TransformStack:
    """Additive parameter update ``tau + dtau``; ``dtau`` is ``(p, B)``."""
    dtau = np.asarray(dtau, dtype=float)
    if dtau.shape != (taus.n_params, len(taus)):
        raise InvalidArgumentError(
            f"increment shape {dtau.shape} does not match ({taus.n_params}, {len(taus)})"
        )
    new = taus.params + dtau
    out = []
    for i in range(len(taus)):
        try:
            out.append(TransformParams(taus.group, new[:, i]))
        except InvalidArgumentError as exc:
            raise InvalidUpdateError(f"update makes transform {i} invalid: {exc}") from exc
    return TransformStack(out)


# -- coordinates ------------------------------------------------------------


def frame_center(shape) -> tuple[float, float]:
    h, w = shape
    return (w - 1) / 2.0, (h - 1) / 2.0


def centered_grid(shape) -> tuple[np.ndarray, np.ndarray]:
    """Centred (u, v) coordinates of every pixel, flattened in row-major order."""
    h, w = shape
    cx, cy = frame_center(shape)
    v, u = np.mgrid[0:h, 0:w]
    return u.reshape(-1) - cx, v.reshape(-1) - cy


def pixel_to_centered(points, shape) -> np.ndarray:
    cx, cy = frame_center(shape)
    return np.asarray(points, dtype=float) - np.array([cx, cy])


def centered_to_pixel(points, shape) -> np.ndarray:
    cx, cy = frame_center(shape)
    return np.asarray(points, dtype=float) + np.array([cx, cy])


def _map(group, z, u, v):
    if group == "translation":
        return u + z[0], v + z[1]
    if group == "similarity":
        s, th, tx, ty = z
        c, sn = s * np.cos(th), s * np.sin(th)
        return c * u - sn * v + tx, sn * u + c * v + ty
    if group == "affine":
        return z[0] * u + z[1] * v + z[2], z[3] * u + z[4] * v + z[5]
    w = z[6] * u + z[7] * v + 1.0
    return (z[0] * u + z[1] * v + z[2]) / w, (z[3] * u + z[4] * v + z[5]) / w


def _map_with_derivative(group, z, u, v):
    """Mapped coordinates plus their ``(N, p)`` derivatives w.r.t. ``z``."""
    n = u.size
    zeros, ones = np.zeros(n), np.ones(n)
    if group == "translation":
        x, y = u + z[0], v + z[1]
        dx = np.stack([ones, zeros], axis=1)
        dy = np.stack([zeros, ones], axis=1)
    elif group == "similarity":
        s, th, tx, ty = z
        c, sn = np.cos(th), np.sin(th)
        ru, rv = c * u - sn * v, sn * u + c * v
        x, y = s * ru + tx, s * rv + ty
        dx = np.stack([ru, -s * rv, ones, zeros], axis=1)
        dy = np.stack([rv, s * ru, zeros, ones], axis=1)
    elif group == "affine":
        x, y = z[0] * u + z[1] * v + z[2], z[3] * u + z[4] * v + z[5]
        dx = np.stack([u, v, ones, zeros, zeros, zeros], axis=1)
        dy = np.stack([zeros, zeros, zeros, u, v, ones], axis=1)
    else:
        w = z[6] * u + z[7] * v + 1.0
        x = (z[0] * u + z[1] * v + z[2]) / w
        y = (z[3] * u + z[4] * v + z[5]) / w
        uw, vw, iw = u / w, v / w, 1.0 / w
        dx = np.stack([uw, vw, iw, zeros, zeros, zeros, -x * uw, -x * vw], axis=1)
        dy = np.stack([zeros, zeros, zeros, uw, vw, iw, -y * uw, -y * vw], axis=1)
    return x, y, dx, dy


# -- interpolation ----------------------------------------------------------


def _keys(t):
    t = np.abs(t)
    a = KEYS_A
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _keys_derivative(t):
    s, t = np.sign(t), np.abs(t)
    a = KEYS_A
    d = np.where(
        t <= 1,
        3 * (a + 2) * t**2 - 2 * (a + 3) * t,
        np.where(t < 2, 3 * a * t**2 - 10 * a * t + 8 * a, 0.0),
    )
    return s * d


def _gather(img, rows, cols):
    h, w = img.shape
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    out = np.zeros(rows.shape)
    out[ok] = img[rows[ok], cols[ok]]
    return out


def sample(img: np.ndarray, x, y, interpolation: str = "cubic", gradient: bool = False):
    """Interpolate ``img`` at pixel coordinates ``(x, y)`` with zero padding.

    With ``gradient=True`` also returns the exact derivatives of the
    interpolant along x and y.
    """
    img = np.asarray(img, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bad = ~(np.isfinite(x) & np.isfinite(y))
    if bad.any():
        # points at infinity (projective horizon) read zero
        x, y = np.where(bad, -10.0, x), np.where(bad, -10.0, y)
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
    if interpolation == "cubic":
        offsets = (-1, 0, 1, 2)
        wx = [_keys(fx - k) for k in offsets]
        wy = [_keys(fy - k) for k in offsets]
        if gradient:
            dwx = [_keys_derivative(fx - k) for k in offsets]
            dwy = [_keys_derivative(fy - k) for k in offsets]
    elif interpolation == "bilinear":
        offsets = (0, 1)
        wx, wy = [1 - fx, fx], [1 - fy, fy]
        if gradient:
            dwx = [-np.ones_like(fx), np.ones_like(fx)]
            dwy = [-np.ones_like(fy), np.ones_like(fy)]
    else:
        raise InvalidArgumentError(f"unknown interpolation {interpolation!r}")

    val = np.zeros(x.shape)
    gx = np.zeros(x.shape) if gradient else None
    gy = np.zeros(x.shape) if gradient else None
    for j, ky in enumerate(offsets):
        for i, kx in enumerate(offsets):
            pix = _gather(img, y0 + ky, x0 + kx)
            val += wx[i] * wy[j] * pix
            if gradient:
                gx += dwx[i] * wy[j] * pix
                gy += wx[i] * dwy[j] * pix
    if gradient:
        return val, gx, gy
    return val


# -- warping ----------------------------------------------------------------


def warp(img, t: TransformParams, out_shape=None, interpolation: str = "cubic") -> np.ndarray:
    """Resample ``img`` so that output pixel ``u`` reads ``img(T(u))``."""
    img = np.asarray(img, dtype=float)
    out_shape = tuple(out_shape or img.shape)
    u, v = centered_grid(out_shape)
    x, y = _map(t.group, t.zeta, u, v)
    cx, cy = frame_center(img.shape)
    return sample(img, x + cx, y + cy, interpolation).reshape(out_shape)


def warp_jacobian(img, t: TransformParams, out_shape=None, interpolation: str = "cubic",
                  normalize: bool = True):
    """Warped vector and its Jacobian w.r.t. the transform parameters.

    Returns ``(q, J)``. With ``normalize=True`` (the default) ``q`` is the unit
    vector ``vec(I o T) / ||vec(I o T)||`` and ``J`` is the derivative of that
    unit vector: ``(I - q q^T) dvec / ||vec(I o T)||``.
    """
    img = np.asarray(img, dtype=float)
    out_shape = tuple(out_shape or img.shape)
    u, v = centered_grid(out_shape)
    x, y, dx, dy = _map_with_derivative(t.group, t.zeta, u, v)
    cx, cy = frame_center(img.shape)
    q, gx, gy = sample(img, x + cx, y + cy, interpolation, gradient=True)
    J = gx[:, None] * dx + gy[:, None] * dy
    if not normalize:
        return q, J
    norm = np.linalg.norm(q)
    if norm == 0:
        raise DegenerateWarpError(0)
    q = q / norm
    J = (J - np.outer(q, q @ J)) / norm
    return q, J


def jacobian(img, t: TransformParams, out_shape=None, interpolation: str = "cubic") -> np.ndarray:
    """``pixels x p`` Jacobian of the normalised warped image."""
    return warp_jacobian(img, t, out_shape, interpolation)[1]


def _frames(batch) -> Sequence[np.ndarray]:
    return getattr(batch, "images", batch)


def warp_normalize_batch(batch, taus: TransformStack, out_shape=None,
                         interpolation: str = "cubic") -> np.ndarray:
    """Stack unit-norm warped images as columns of a ``pixels x B`` matrix."""
    frames = _frames(batch)
    if len(frames) == 0:
        raise InvalidArgumentError("empty batch")
    if len(frames) != len(taus):
        raise InvalidArgumentError(f"{len(frames)} images but {len(taus)} transforms")
    cols = []
    for i, (img, t) in enumerate(zip(frames, taus)):
        q = warp(img, t, out_shape, interpolation).reshape(-1)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise DegenerateWarpError(i)
        cols.append(q / norm)
    return np.stack(cols, axis=1)


def batch_jacobians(batch, taus: TransformStack, out_shape=None, interpolation: str = "cubic"):
    """Normalised warped matrix and per-image Jacobians in one pass.

    Returns ``(D, [J_1, ..., J_B])``.
    """
    frames = _frames(batch)
    if len(frames) != len(taus):
        raise InvalidArgumentError(f"{len(frames)} images but {len(taus)} transforms")
    cols, jacs = [], []
    for i, (img, t) in enumerate(zip(frames, taus)):
        try:
            q, J = warp_jacobian(img, t, out_shape, interpolation)
        except DegenerateWarpError:
            raise DegenerateWarpError(i) from None
        cols.append(q)
        jacs.append(J)
    return np.stack(cols, axis=1), jacs
