"""Parametrised Neo-Hookean ground truth, load-case solvers and datasets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .errors import DomainError, SolverError

log = logging.getLogger(__name__)

KAPPA = 100.0
LAMBDA_PRINT = 100.0
N_POINTS = 101
T_GRID_SIZE = 201

LOAD_PATHS = ("uniaxial", "equibiaxial", "shear", "mixed")
CALIB_PATHS = ("uniaxial", "equibiaxial", "shear")
CONTROL_RANGES = {
    "uniaxial": (0.5, 1.5),
    "equibiaxial": (0.5, 1.5),
    "shear": (-0.5, 0.5),
    "mixed": (0.0, 0.5),
}

# indices into the 201-point t-grid used for calibration
STUDY1_CALIB_IDX = (0, 40, 80, 120, 160, 200)
STUDY2_CALIB_IDX = (0, 20, 180, 200)
PRINT_CALIB = tuple((g, tau) for g in (0.0, 0.5, 1.0) for tau in (0.0, 0.5, 1.0))
ISO_MU = (1.4, 2.4)
ISO_SAMPLES = 100


@dataclass(frozen=True)
class NeoHookeMaterial:
    mu: float
    lam: float

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("shear modulus must be positive")


def _check_unit(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)):
        raise DomainError("parameter outside [0, 1]")
    return t


def mu_scalar(case, t):
    t = _check_unit(t)
    if case == "A":
        return 0.5 + 2.0 * t
    if case == "B":
        return 8.0 * t**2 - 8.0 * t + 2.5
    if case == "C":
        return -8.0 * t**2 + 8.0 * t + 0.5
    raise ValueError(f"unknown parametrisation case {case!r}")


def lambda_scalar(case, t, kappa=KAPPA):
    return kappa - 2.0 / 3.0 * mu_scalar(case, t)


def mu_print(t):
    """Shear modulus of the printing-inspired parametrisation, t = (G0, tau0)."""
    t = _check_unit(t)
    G = 0.6 + 0.4 * t[..., 0]
    tau = 1.5 + 4.5 * t[..., 1]
    return 2.5 * np.tanh(1.7 * G**2 * np.log(tau))


def material(parametrisation, t):
    if parametrisation == "print":
        return NeoHookeMaterial(float(mu_print(t)), LAMBDA_PRINT)
    t = float(np.asarray(t).reshape(-1)[0])
    return NeoHookeMaterial(float(mu_scalar(parametrisation, t)), float(lambda_scalar(parametrisation, t)))


def nh_potential(mat, F):
    I = kin.invariants(F)
    J = np.sqrt(I[..., 2])
    return 0.5 * mat.mu * (I[..., 0] - 3.0 - 2.0 * np.log(J)) + 0.5 * mat.lam * (J - 1.0) ** 2


def nh_stress(mat, F):
    """P = mu (F - F^-T) + lambda J (J - 1) F^-T."""
    F = np.asarray(F, dtype=float)
    J = kin.det(F)
    FiT = kin.inv_transpose(F)
    return mat.mu * (F - FiT) + (mat.lam * J * (J - 1.0))[..., None, None] * FiT


# -- load cases ------------------------------------------------------------------


def _solve_lateral(residual, tol=1e-13, max_iter=100):
    """Scalar root of ``residual(s)`` with s > 0, starting at s = 1.

    Newton with a central-difference derivative and step halving on residual
    increase; bisection on [0.3, 3] if Newton stalls.
    """
    s = 1.0
    r = residual(s)
    h = 1e-7
    for _ in range(max_iter):
        if abs(r) <= tol:
            return s
        d = (residual(s + h) - residual(s - h)) / (2 * h)
        if d == 0 or not np.isfinite(d):
            break
        step = -r / d
        lam = 1.0
        while True:
            s_new = s + lam * step
            if s_new > 0:
                r_new = residual(s_new)
                if abs(r_new) < abs(r) or lam < 1e-8:
                    break
            lam *= 0.5
            if lam < 1e-12:
                break
        if s_new <= 0 or abs(r_new) >= abs(r):
            break
        s, r = s_new, r_new
    log.debug("Newton stalled at s=%g, residual %g; bisecting", s, r)
    return _bisect(residual, 0.3, 3.0, tol, max_iter=200)


def _bisect(residual, a, b, tol, max_iter):
    fa, fb = residual(a), residual(b)
    if fa * fb > 0:
        raise SolverError("lateral stretch not bracketed in [0.3, 3]")
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = residual(m)
        if abs(fm) <= tol or b - a < 1e-16:
            return m
        if fa * fm <= 0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    raise SolverError("lateral stretch solve did not converge")


def _lateral_residual(mat, axial, s):
    # lateral component P_kk of nh_stress when F_kk = s is the only entry in its row
    # and column; ``axial`` is det F / s
    J = axial * s
    return mat.mu * (s - 1.0 / s) + mat.lam * J * (J - 1.0) / s


def solve_uniaxial(mat, F11):
    """diag(F11, s, s) with P22 = P33 = 0."""
    s = _solve_lateral(lambda s: _lateral_residual(mat, F11 * s, s))
    return np.diag([F11, s, s])


def solve_equibiaxial(mat, F11):
    """diag(F11, F11, c) with P33 = 0."""
    c = _solve_lateral(lambda c: _lateral_residual(mat, F11 * F11, c))
    return np.diag([F11, F11, c])


def shear_F(gamma):
    F = np.eye(3)
    F[0, 1] = gamma
    return F


def mixed_F(gamma, lateral=1.0):
    """Tension and shear superposed: F11 = 1 + gamma, F12 = gamma, F22 = F33 = lateral."""
    return np.array([[1.0 + gamma, gamma, 0.0], [0.0, lateral, 0.0], [0.0, 0.0, lateral]])


def solve_mixed(mat, gamma):
    """Mixed shear-tension with laterally stress-free sides (P22 = P33 = 0)."""
    # upper-triangular F: P22 is unaffected by the shear entry
    s = _solve_lateral(lambda s: _lateral_residual(mat, (1.0 + gamma) * s, s))
    return mixed_F(gamma, s)


MIXED_MODES = ("kinematic", "stress-free")


def load_path(kind, mat, n=N_POINTS, mixed="kinematic"):
    """Deformation gradients along one load path, shape (n, 3, 3).

    ``mixed`` selects the lateral treatment of the shear-tension path: held
    fixed at F22 = F33 = 1 (default), or solved for P22 = P33 = 0.
    """
    lo, hi = CONTROL_RANGES[kind]
    control = np.linspace(lo, hi, n)
    if kind == "uniaxial":
        Fs = [solve_uniaxial(mat, c) for c in control]
    elif kind == "equibiaxial":
        Fs = [solve_equibiaxial(mat, c) for c in control]
    elif kind == "shear":
        Fs = [shear_F(c) for c in control]
    elif kind == "mixed" and mixed == "stress-free":
        Fs = [solve_mixed(mat, c) for c in control]
    elif kind == "mixed" and mixed == "kinematic":
        Fs = [mixed_F(c) for c in control]
    else:
        raise ValueError(f"unknown load path {kind!r}")
    return control, np.array(Fs)


# -- datasets ------------------------------------------------------------------


@dataclass
class Dataset:
    """Stacked (F, t, P) tuples plus grouping ids for the loss weights."""

    F: np.ndarray
    t: np.ndarray
    P: np.ndarray
    path_id: np.ndarray
    t_id: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.F)

    @property
    def y_dim(self):
        return self.t.shape[1]

    def subset(self, mask):
        return Dataset(self.F[mask], self.t[mask], self.P[mask], self.path_id[mask],
                       self.t_id[mask], dict(self.meta))


def t_grid():
    return np.arange(T_GRID_SIZE) / (T_GRID_SIZE - 1)


def _assemble(parametrisation, paths, t_values, t_ids, mixed="kinematic"):
    F, t, P, pid, tid = [], [], [], [], []
    for kind in paths:
        for tv, ti in zip(t_values, t_ids):
            mat = material(parametrisation, tv)
            _, Fs = load_path(kind, mat, mixed=mixed)
            F.append(Fs)
            P.append(nh_stress(mat, Fs))
            t.append(np.broadcast_to(np.atleast_1d(tv), (len(Fs), np.size(tv))))
            pid.append(np.full(len(Fs), LOAD_PATHS.index(kind)))
            tid.append(np.full(len(Fs), ti))
    return Dataset(np.concatenate(F), np.concatenate(t).astype(float), np.concatenate(P),
                   np.concatenate(pid), np.concatenate(tid),
                   {"parametrisation": parametrisation, "mixed": mixed})


def build_scalar_study(case, calib_idx, role, mixed="kinematic"):
    grid = t_grid()
    if role == "calib":
        idx = list(calib_idx)
        ds = _assemble(case, CALIB_PATHS, grid[idx], idx)
    elif role == "test":
        idx = [k for k in range(T_GRID_SIZE) if k not in set(calib_idx)]
        ds = _assemble(case, ("mixed",), grid[idx], idx, mixed)
    else:
        raise ValueError(f"role must be 'calib' or 'test', got {role!r}")
    ds.meta["role"] = role
    return ds


def build_study1(case, role, mixed="kinematic"):
    ds = build_scalar_study(case, STUDY1_CALIB_IDX, role, mixed)
    ds.meta["study"] = "I"
    return ds


def build_study2(role, case="A", mixed="kinematic"):
    ds = build_scalar_study(case, STUDY2_CALIB_IDX, role, mixed)
    ds.meta["study"] = "II"
    return ds


def iso_curve(mu_target, n=ISO_SAMPLES):
    """(G0, tau0) samples with mu_print = mu_target, G0 uniform on the admissible interval."""
    H = np.arctanh(mu_target / 2.5)
    # tau0 in [0, 1]  <=>  H / (1.7 ln 6) <= G^2 <= H / (1.7 ln 1.5)
    g_lo = np.sqrt(H / (1.7 * np.log(6.0)))
    g_hi = np.sqrt(H / (1.7 * np.log(1.5)))
    G0_lo = max(0.0, (g_lo - 0.6) / 0.4)
    G0_hi = min(1.0, (g_hi - 0.6) / 0.4)
    G0 = np.linspace(G0_lo, G0_hi, n)
    G = 0.6 + 0.4 * G0
    tau0 = (np.exp(H / (1.7 * G**2)) - 1.5) / 4.5
    return np.stack([G0, np.clip(tau0, 0.0, 1.0)], axis=1)


def build_vector_study(role, mixed="kinematic"):
    if role == "calib":
        ts = [np.array(c) for c in PRINT_CALIB]
        ds = _assemble("print", CALIB_PATHS, ts, range(len(ts)))
    elif role == "test":
        ts = np.concatenate([iso_curve(m) for m in ISO_MU])
        ds = _assemble("print", ("mixed",), list(ts), range(len(ts)), mixed)
    else:
        raise ValueError(f"role must be 'calib' or 'test', got {role!r}")
    ds.meta.update(role=role, study="vector")
    return ds


def build(study, role, case="A", mixed="kinematic"):
    study = str(study)
    if mixed not in MIXED_MODES:
        raise ValueError(f"mixed must be one of {MIXED_MODES}, got {mixed!r}")
    if study in ("I", "1"):
        return build_study1(case, role, mixed)
    if study in ("II", "2"):
        return build_study2(role, case, mixed)
    if study == "vector":
        return build_vector_study(role, mixed)
    raise ValueError(f"unknown study {study!r}")


# -- CSV -------------------------------------------------------------------------

_TENSOR = [f"{i}{j}" for i in range(1, 4) for j in range(1, 4)]


def csv_header(y_dim):
    return ([f"F{c}" for c in _TENSOR] + [f"t{k + 1}" for k in range(y_dim)]
            + [f"P{c}" for c in _TENSOR] + ["load_path_id", "t_id"])


def write_csv(ds, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(ds.y_dim))
        for F, t, P, pid, tid in zip(ds.F, ds.t, ds.P, ds.path_id, ds.t_id):
            row = ["%.17g" % v for v in np.concatenate([F.ravel(), t, P.ravel()])]
            w.writerow(row + [int(pid), int(tid)])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    y_dim = sum(1 for h in header if h.startswith("t") and h[1:].isdigit())
    if header != csv_header(y_dim):
        raise ValueError(f"{path}: unexpected CSV header")
    a = np.array([[float(v) for v in r[:-2]] for r in body]).reshape(len(body), -1)
    ids = np.array([[int(v) for v in r[-2:]] for r in body], dtype=int).reshape(len(body), 2)
    return Dataset(a[:, :9].reshape(-1, 3, 3), a[:, 9:9 + y_dim], a[:, 9 + y_dim:].reshape(-1, 3, 3),
                   ids[:, 0], ids[:, 1])
