"""Tensor algebra and isotropic strain invariants.

All routines accept stacks of tensors with shape ``(..., 3, 3)``. Invariants are
returned as an array with trailing axis ``(I1, I2, I3, I3*)``.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

INVARIANT_NAMES = ("I1", "I2", "I3", "I3star")

# invariants of the reference configuration F = I
IDENTITY_INVARIANTS = np.array([3.0, 3.0, 1.0, -1.0])


def det(A):
    A = np.asarray(A, dtype=float)
    return np.einsum("...i,...i->...", A[..., 0, :], np.cross(A[..., 1, :], A[..., 2, :]))


def cofactor(A):
    """Cofactor matrix from 2x2 minors; equals det(A) A^-T whenever A is invertible."""
    A = np.asarray(A, dtype=float)
    r0, r1, r2 = A[..., 0, :], A[..., 1, :], A[..., 2, :]
    return np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2)


def _checked_det(F):
    J = det(F)
    if np.any(~(J > 0)):
        raise DomainError("deformation gradient must have det F > 0")
    return J


def inv_transpose(F):
    F = np.asarray(F, dtype=float)
    return cofactor(F) / _checked_det(F)[..., None, None]


def right_cauchy_green(F):
    F = np.asarray(F, dtype=float)
    return np.swapaxes(F, -1, -2) @ F


def invariants(F):
    """(I1, I2, I3, I3*) of C = F^T F with I3* = -sqrt(I3)."""
    F = np.asarray(F, dtype=float)
    J = _checked_det(F)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    I2 = np.trace(cofactor(C), axis1=-2, axis2=-1)
    I3 = det(C)
    return np.stack([I1, I2, I3, -np.sqrt(I3)], axis=-1)


def invariant_gradients(F):
    """Derivatives dI_a/dF stacked along axis -3, shape ``(..., 4, 3, 3)``."""
    F = np.asarray(F, dtype=float)
    J = _checked_det(F)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    FiT = cofactor(F) / J[..., None, None]
    eye = np.eye(3)
    dI1 = 2.0 * F
    dI2 = 2.0 * F @ (I1[..., None, None] * eye - C)
    dI3 = 2.0 * (J**2)[..., None, None] * FiT
    dI3s = -J[..., None, None] * FiT
    return np.stack([dI1, dI2, dI3, dI3s], axis=-3)


def poly_invariants(F, H, J):
    """Invariant inputs expressed in the independent coordinates (F, Cof F, det F).

    With ``H = cofactor(F)`` and ``J = det(F)`` this reproduces :func:`invariants`;
    for independent arguments every component is convex in (F, H, J).
    """
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float)
    if np.any(~(J > 0)):
        raise DomainError("J must be positive")
    I1 = np.einsum("...ij,...ij->...", F, F)
    I2 = np.einsum("...ij,...ij->...", H, H)
    return np.stack([I1, I2, J**2, -J], axis=-1)


def random_rotation(seed=None, size=None):
    """Uniformly distributed rotation(s) via QR with sign fix.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    shape = () if size is None else (size,)
    G = rng.standard_normal(shape + (3, 3))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
    flip = det(Q) < 0
    Q[..., :, 0] = np.where(flip[..., None], -Q[..., :, 0], Q[..., :, 0])
    return Q


def sample_deformation(rng, n, spread=0.3, det_range=(0.2, 3.0)):
    """F = I + spread * G with G ~ U[-1, 1], rejected unless det F lies in det_range."""
    out = np.empty((0, 3, 3))
    while len(out) < n:
        F = np.eye(3) + spread * rng.uniform(-1.0, 1.0, size=(2 * n, 3, 3))
        J = det(F)
        keep = (J >= det_range[0]) & (J <= det_range[1])
        out = np.concatenate([out, F[keep]])
    return out[:n]
