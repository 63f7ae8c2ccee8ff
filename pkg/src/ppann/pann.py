"""Physics-augmented potential psi = psi_NN(I; t) + psi_growth(J) - n(t) J.

The stress-free reference configuration is enforced through ``n(t)``: at F = I the
invariant gradients are dI1/dF = 2I, dI2/dF = 4I, dI3/dF = 2I, dI3*/dF = -I and
dJ/dF = I, so P(I; t) = 0 requires

    n(t) = 2 dpsi/dI1 + 4 dpsi/dI2 + 2 dpsi/dI3 - dpsi/dI3*   at I = (3, 3, 1, -1).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from . import picnn
from .errors import DomainError

NORMALISATION_WEIGHTS = np.array([2.0, 4.0, 2.0, -1.0])


def growth_term(J):
    J = np.asarray(J, dtype=float)
    if np.any(~(J > 0)):
        raise DomainError("J must be positive")
    return (J + 1.0 / J - 2.0) ** 2


def growth_term_dJ(J):
    J = np.asarray(J, dtype=float)
    if np.any(~(J > 0)):
        raise DomainError("J must be positive")
    return 2.0 * (J + 1.0 / J - 2.0) * (1.0 - 1.0 / J**2)


@dataclass
class StressResult:
    P: np.ndarray
    psi: np.ndarray


@dataclass
class PannModel:
    """pICNN potential plus growth and normalisation terms.

    ``stress_scale`` maps the network's normalised stress to physical units.
    ``normalisation`` and ``growth`` switch the analytical terms (used for the
    ablation study and for negative controls).
    """

    params: picnn.PicnnParams
    stress_scale: float = 1.0
    normalisation: bool = True
    growth: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def config(self):
        return self.params.config

    @property
    def theta(self):
        return self.params.theta

    @property
    def y_dim(self):
        return self.params.config.y_dim

    def with_theta(self, theta):
        return replace(self, params=picnn.PicnnParams(self.config, np.asarray(theta, dtype=float)),
                       meta=dict(self.meta))

    # -- argument handling ---------------------------------------------------
    def _args(self, F, t):
        F = np.asarray(F, dtype=float)
        single = F.ndim == 2
        F = F.reshape(-1, 3, 3)
        return F, self._params_batch(t, len(F)), single

    def _params_batch(self, t, n):
        t = np.asarray(t, dtype=float)
        ny = self.y_dim
        if t.size == ny:
            return np.broadcast_to(t.reshape(1, ny), (n, ny))
        if t.ndim == 1 and ny == 1:
            t = t[:, None]
        if t.shape != (n, ny):
            raise ValueError(f"parameter array of shape {t.shape} does not match batch {n}")
        return t

    # -- normalisation ---------------------------------------------------------
    def normalisation_offset(self, t):
        """n(t) for a batch of parameters (zero if the term is switched off)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if t.shape[1] != self.y_dim:
            t = t.reshape(-1, self.y_dim)
        if not self.normalisation:
            return np.zeros(len(t))
        g = picnn.grad_x(self.params, kin.IDENTITY_INVARIANTS[None, :], t)
        return g @ NORMALISATION_WEIGHTS

    # -- evaluation --------------------------------------------------------------
    def _psi_parts(self, x, J, t):
        tape = picnn.Tape(self.params, x, t)
        offset = self.normalisation_offset(t)
        psi = tape.value - offset * J
        if self.growth:
            psi = psi + growth_term(J)
        return tape, psi, offset

    def potential(self, F, t):
        F, t, single = self._args(F, t)
        J = kin.det(F)
        psi = self._psi_parts(kin.invariants(F), J, t)[1]
        psi = self.stress_scale * psi
        return psi[0] if single else psi

    def potential_xi(self, F, H, J, t):
        """Potential as a function of independent (F, Cof F, det F) coordinates."""
        F = np.asarray(F, dtype=float).reshape(-1, 3, 3)
        H = np.asarray(H, dtype=float).reshape(-1, 3, 3)
        J = np.asarray(J, dtype=float).reshape(-1)
        t = self._params_batch(t, len(F))
        psi = self._psi_parts(kin.poly_invariants(F, H, J), J, t)[1]
        return self.stress_scale * psi

    def stress(self, F, t):
        F, t, single = self._args(F, t)
        J = kin.det(F)
        tape, psi, offset = self._psi_parts(kin.invariants(F), J, t)
        g = tape.grad_x()
        dI = kin.invariant_gradients(F)
        K = J[:, None, None] * kin.inv_transpose(F)
        vol = -offset
        if self.growth:
            vol = vol + growth_term_dJ(J)
        P = np.einsum("ba,baij->bij", g, dI) + vol[:, None, None] * K
        P = self.stress_scale * P
        psi = self.stress_scale * psi
        if single:
            return StressResult(P[0], psi[0])
        return StressResult(P, psi)

    def dpsi_dt(self, F, t):
        """Exact derivative of the potential with respect to the parameters."""
        F, t, single = self._args(F, t)
        J = kin.det(F)
        tape = picnn.Tape(self.params, kin.invariants(F), t)
        d = tape.grad_y()
        if self.normalisation:
            tI = picnn.Tape(self.params, kin.IDENTITY_INVARIANTS[None, :], t)
            _, dn_dt = tI.mixed(NORMALISATION_WEIGHTS)
            d = d - J[:, None] * dn_dt
        d = self.stress_scale * d
        return d[0] if single else d

    def stress_param_grad(self, F, t):
        """dP/dtheta, shape (batch, n_params, 3, 3) (or (n_params, 3, 3) for one F)."""
        F, t, single = self._args(F, t)
        J = kin.det(F)
        M = picnn.grad_params_of_grad_x(self.params, kin.invariants(F), t)
        dI = kin.invariant_gradients(F)
        dP = np.einsum("bap,baij->bpij", M, dI)
        if self.normalisation:
            MI = picnn.grad_params_of_grad_x(self.params, kin.IDENTITY_INVARIANTS[None, :], t)
            dn = np.einsum("bap,a->bp", MI, NORMALISATION_WEIGHTS)
            K = J[:, None, None] * kin.inv_transpose(F)
            dP = dP - np.einsum("bp,bij->bpij", dn, K)
        dP = self.stress_scale * dP
        return dP[0] if single else dP


# module-level aliases mirroring the model methods


def normalisation_offset(model, t):
    return model.normalisation_offset(t)


def potential(model, F, t):
    return model.potential(F, t)


def stress(model, F, t):
    return model.stress(F, t)


def stress_param_grad(model, F, t):
    return model.stress_param_grad(F, t)


def new_model(kind, y_dim=1, seed=0, scheme="glorot", **kwargs):
    config = picnn.default_config(kind, y_dim)
    return PannModel(picnn.init(config, seed, scheme), **kwargs)


def zero_model(kind="Type1", y_dim=1):
    config = picnn.default_config(kind, y_dim)
    return PannModel(picnn.PicnnParams(config, np.zeros(picnn.count_params(config))))


# -- persistence ---------------------------------------------------------------


def dumps(model):
    extra = {
        "stress_scale": "%.17g" % model.stress_scale,
        "normalisation": int(model.normalisation),
        "growth": int(model.growth),
    }
    for key, value in model.meta.items():
        extra[key] = str(value).replace("\n", " ")
    return picnn.dumps(model.params, extra)


def loads(text):
    params, meta = picnn.loads(text)
    scale = float(meta.pop("stress_scale", "1"))
    norm = bool(int(meta.pop("normalisation", "1")))
    growth = bool(int(meta.pop("growth", "1")))
    return PannModel(params, stress_scale=scale, normalisation=norm, growth=growth, meta=meta)


def save(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
