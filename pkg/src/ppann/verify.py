"""Property probes for constitutive conditions and derivative paths.

Each ``check_*`` samples inputs deterministically from ``(probe.seed, check)`` and
returns a :class:`ProbeReport`. Failing reports carry the offending inputs so the
violation can be replayed. Negative controls (doctored models) live in
:func:`make_mutant`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from . import picnn
from .pann import PannModel

CHECKS = ("objectivity", "isotropy", "normalisation", "polyconvexity", "growth",
          "gradients", "monotonicity")
STRUCTURAL = CHECKS[:6]

# per-check seed offsets so probes are independent but reproducible
_OFFSETS = {name: 1000 * (k + 1) for k, name in enumerate(CHECKS)}


@dataclass(frozen=True)
class ProbeConfig:
    n_samples: int = 64
    poly_samples: int = 2048
    seed: int = 0
    spread: float = 0.3
    det_range: tuple = (0.2, 3.0)
    poly_J_range: tuple = (0.2, 3.0)
    objectivity_tol: float = 1e-10
    angular_tol: float = 1e-9
    normalisation_tol: float = 1e-8
    convexity_tol: float = 1e-9
    monotonicity_tol: float = 1e-9
    fd_step: float = 1e-3
    fd_tol: float = 1e-6
    fd_directions: int = 4
    growth_J: tuple = (0.5, 0.2, 0.1, 0.05, 0.01)
    growth_floor_J: float = 1e-3
    growth_floor: float = 1e3

    def __post_init__(self):
        tols = (self.objectivity_tol, self.angular_tol, self.normalisation_tol,
                self.convexity_tol, self.monotonicity_tol, self.fd_step, self.fd_tol)
        if any(not tol > 0 for tol in tols):
            raise ValueError("all tolerances must be positive")
        if self.n_samples < 0 or self.poly_samples < 0:
            raise ValueError("n_samples must be non-negative")

    def rng(self, check):
        return np.random.default_rng(self.seed + _OFFSETS[check])


@dataclass
class ProbeReport:
    name: str
    passed: bool
    violation: float
    n_samples: int
    seed: int
    witness: dict = field(default_factory=dict)
    note: str = ""

    @property
    def no_evidence(self):
        return self.n_samples == 0

    def to_text(self):
        lines = [f"{self.name}.passed = {self.passed}",
                 f"{self.name}.violation = {self.violation:.6e}",
                 f"{self.name}.n_samples = {self.n_samples}",
                 f"{self.name}.seed = {self.seed}"]
        if self.note:
            lines.append(f"{self.name}.note = {self.note}")
        for k, v in self.witness.items():
            flat = " ".join("%.17g" % x for x in np.ravel(v))
            lines.append(f"{self.name}.witness.{k} = {flat}")
        return "\n".join(lines)


def _rel(a, b, axes=None):
    """Max-abs difference relative to max(|a|, |b|, 1)."""
    diff = np.max(np.abs(a - b), axis=axes)
    scale = np.maximum(np.maximum(np.max(np.abs(a), axis=axes), np.max(np.abs(b), axis=axes)), 1.0)
    return diff / scale


def _sample(model, probe, check, n=None):
    rng = probe.rng(check)
    n = probe.n_samples if n is None else n
    F = kin.sample_deformation(rng, n, probe.spread, probe.det_range) if n else np.empty((0, 3, 3))
    t = rng.uniform(0.0, 1.0, (n, model.y_dim))
    return rng, F, t


def _report(name, probe, violations, tol, witness_fn, n, note=""):
    if n == 0:
        return ProbeReport(name, True, 0.0, 0, probe.seed, note="no evidence: zero samples")
    k = int(np.argmax(violations))
    worst = float(violations[k])
    passed = bool(worst <= tol)
    witness = {} if passed else witness_fn(k)
    return ProbeReport(name, passed, worst, n, probe.seed, witness, note)


def _vacuous(name, probe):
    return ProbeReport(name, True, 0.0, 0, probe.seed, note="no evidence: zero samples")


# -- checks ----------------------------------------------------------------------------


def check_objectivity(model, probe=ProbeConfig()):
    """psi(QF) = psi(F), P(QF) = Q P(F), and P F^T symmetric."""
    if probe.n_samples == 0:
        return _vacuous("objectivity", probe)
    rng, F, t = _sample(model, probe, "objectivity")
    Q = kin.random_rotation(rng, len(F))
    QF = Q @ F
    r0 = model.stress(F, t)
    r1 = model.stress(QF, t)
    dev = np.maximum(_rel(r0.psi[:, None], r1.psi[:, None], axes=1),
                     _rel(Q @ r0.P, r1.P, axes=(1, 2)))
    A = r0.P @ np.swapaxes(F, 1, 2)
    skew = np.max(np.abs(A - np.swapaxes(A, 1, 2)), axis=(1, 2))
    ang = skew / (1.0 + np.max(np.abs(A), axis=(1, 2)))
    # fold the angular-momentum violation onto the objectivity tolerance scale
    worst = np.maximum(dev, ang * (probe.objectivity_tol / probe.angular_tol))
    rep = _report("objectivity", probe, worst, probe.objectivity_tol,
                  lambda k: {"F": F[k], "t": t[k], "Q": Q[k]}, len(F))
    rep.note = f"max angular-momentum residual {ang.max():.3e}"
    return rep


def check_isotropy(model, probe=ProbeConfig()):
    """psi(FQ) = psi(F) and P(FQ) = P(F) Q for rotations Q."""
    if probe.n_samples == 0:
        return _vacuous("isotropy", probe)
    rng, F, t = _sample(model, probe, "isotropy")
    Q = kin.random_rotation(rng, len(F))
    r0 = model.stress(F, t)
    r1 = model.stress(F @ Q, t)
    dev = np.maximum(_rel(r0.psi[:, None], r1.psi[:, None], axes=1),
                     _rel(r0.P @ Q, r1.P, axes=(1, 2)))
    return _report("isotropy", probe, dev, probe.objectivity_tol,
                   lambda k: {"F": F[k], "t": t[k], "Q": Q[k]}, len(F))


def check_normalisation(model, probe=ProbeConfig()):
    """||P(I; t)||_inf over sampled parameters, including the corners of [0, 1]^d."""
    if probe.n_samples == 0:
        return _vacuous("normalisation", probe)
    rng = probe.rng("normalisation")
    d = model.y_dim
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
    t = np.vstack([corners, rng.uniform(0.0, 1.0, (probe.n_samples, d))])
    F = np.broadcast_to(np.eye(3), (len(t), 3, 3))
    P = model.stress(F, t).P
    v = np.max(np.abs(P), axis=(1, 2))
    return _report("normalisation", probe, v, probe.normalisation_tol,
                   lambda k: {"t": t[k]}, len(t))


def _xi_samples(rng, n, probe):
    F = kin.sample_deformation(rng, n, probe.spread, probe.det_range)
    H = kin.sample_deformation(rng, n, probe.spread, probe.det_range)
    J = rng.uniform(*probe.poly_J_range, n)
    return F, H, J


def check_polyconvexity(model, probe=ProbeConfig()):
    """Midpoint convexity of psi in independent (F, Cof F, det F) at fixed t."""
    n = probe.poly_samples if probe.n_samples else 0
    if n == 0:
        return _vacuous("polyconvexity", probe)
    rng = probe.rng("polyconvexity")
    Fa, Ha, Ja = _xi_samples(rng, n, probe)
    Fb, Hb, Jb = _xi_samples(rng, n, probe)
    t = rng.uniform(0.0, 1.0, (n, model.y_dim))
    pa = model.potential_xi(Fa, Ha, Ja, t)
    pb = model.potential_xi(Fb, Hb, Jb, t)
    pm = model.potential_xi(0.5 * (Fa + Fb), 0.5 * (Ha + Hb), 0.5 * (Ja + Jb), t)
    scale = np.maximum(np.maximum(np.abs(pa), np.abs(pb)), 1.0)
    v = (pm - 0.5 * (pa + pb)) / scale
    return _report("polyconvexity", probe, v, probe.convexity_tol,
                   lambda k: {"Fa": Fa[k], "Ha": Ha[k], "Ja": Ja[k], "Fb": Fb[k],
                              "Hb": Hb[k], "Jb": Jb[k], "t": t[k]}, n)


def check_growth(model, probe=ProbeConfig()):
    """psi increases strictly along volumetric compression and is large near J = 0."""
    n = max(probe.n_samples // 8, 1) if probe.n_samples else 0
    if n == 0:
        return _vacuous("growth", probe)
    rng = probe.rng("growth")
    t = rng.uniform(0.0, 1.0, (n, model.y_dim))
    Js = np.array(list(probe.growth_J) + [probe.growth_floor_J])
    psi = np.empty((n, len(Js)))
    for j, J in enumerate(Js):
        F = np.broadcast_to(np.cbrt(J) * np.eye(3), (n, 3, 3))
        psi[:, j] = model.potential(F, t)
    steps = -np.diff(psi[:, :-1], axis=1)  # positive where psi fails to increase
    v_mono = np.max(steps, axis=1)
    v_floor = probe.growth_floor - psi[:, -1]
    # any non-increase is a violation; floor shortfall is reported relative to the floor
    v = np.maximum(np.where(v_mono >= 0.0, 1.0 + v_mono, 0.0), v_floor / probe.growth_floor)
    rep = _report("growth", probe, v, 0.0, lambda k: {"t": t[k], "J": Js, "psi": psi[k]}, n)
    rep.note = f"min psi at J={probe.growth_floor_J:g}: {psi[:, -1].min():.6g}"
    return rep


def _fd4(f, h):
    """Fourth-order central difference of f at 0."""
    return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h)


def check_gradients(model, probe=ProbeConfig()):
    """Fourth-order differences against stress (in F) and stress_param_grad (along
    random directions in theta).

    Steps h, h/1e2 and h/1e4 are tried and the smallest discrepancy kept per sample:
    the larger steps limit roundoff, the smaller ones avoid straddling relu kinks
    that sit close to a sample.
    """
    n = max(probe.n_samples // 8, 1) if probe.n_samples else 0
    if n == 0:
        return _vacuous("gradients", probe)
    rng, F, t = _sample(model, probe, "gradients", n)
    steps = tuple(probe.fd_step * 1e-2 ** k for k in range(3))
    P = model.stress(F, t).P
    # all perturbed copies in one batch: (step, offset, component, sample)
    E = np.eye(9).reshape(9, 3, 3)
    offsets = np.array([1.0, -1.0, 2.0, -2.0])
    shifts = np.array(steps)[:, None, None, None, None, None] * offsets[None, :, None, None, None, None]
    Fp = F[None, None, None] + shifts * E[None, None, :, None]
    tp = np.broadcast_to(t, Fp.shape[:4] + (t.shape[1],))
    psi = model.potential(Fp.reshape(-1, 3, 3), tp.reshape(-1, t.shape[1])).reshape(Fp.shape[:4])
    fd = (8.0 * (psi[:, 0] - psi[:, 1]) - (psi[:, 2] - psi[:, 3])) / (12.0 * np.array(steps)[:, None, None])
    fd = np.moveaxis(fd, 2, 1).reshape(len(steps), n, 3, 3)
    v_stress = np.min([_rel(P, fd[k], axes=(1, 2)) for k in range(len(steps))], axis=0)
    dP = model.stress_param_grad(F, t)
    n_par = dP.shape[1]
    v_param = np.zeros(n)
    theta = model.theta
    for _ in range(probe.fd_directions):
        d = rng.standard_normal(n_par)
        d /= np.max(np.abs(d))
        pred = np.einsum("bpij,p->bij", dP, d)
        # a smaller step wins where a larger one straddles a relu kink
        best = np.full(n, np.inf)
        for h in steps:
            fd_p = _fd4(lambda s: model.with_theta(theta + s * d).stress(F, t).P, h)
            best = np.minimum(best, _rel(pred, fd_p, axes=(1, 2)))
        v_param = np.maximum(v_param, best)
    v = np.maximum(v_stress, v_param)
    rep = _report("gradients", probe, v, probe.fd_tol, lambda k: {"F": F[k], "t": t[k]}, n)
    rep.note = f"stress {v_stress.max():.3e}, params {v_param.max():.3e}"
    return rep


def check_monotonicity_params(model, probe=ProbeConfig()):
    """dpsi/dt_i >= 0 at sampled points and psi(F, t1) <= psi(F, t2) for t1 <= t2."""
    if probe.n_samples == 0:
        return _vacuous("monotonicity", probe)
    rng, F, t = _sample(model, probe, "monotonicity")
    d = model.dpsi_dt(F, t)
    scale = max(1.0, model.stress_scale)
    v_deriv = np.max(-d, axis=1) / scale
    t2 = np.clip(t + rng.uniform(0.0, 0.5, t.shape), 0.0, 1.0)
    p1 = model.potential(F, t)
    p2 = model.potential(F, t2)
    v_pair = (p1 - p2) / np.maximum(np.maximum(np.abs(p1), np.abs(p2)), 1.0)
    v = np.maximum(v_deriv, v_pair)
    rep = _report("monotonicity", probe, v, probe.monotonicity_tol,
                  lambda k: {"F": F[k], "t": t[k], "t2": t2[k], "dpsi_dt": d[k]}, len(F))
    rep.note = f"min dpsi/dt {d.min():.3e}"
    return rep


CHECK_FUNCTIONS = {
    "objectivity": check_objectivity,
    "isotropy": check_isotropy,
    "normalisation": check_normalisation,
    "polyconvexity": check_polyconvexity,
    "growth": check_growth,
    "gradients": check_gradients,
    "monotonicity": check_monotonicity_params,
}


# -- suite -----------------------------------------------------------------------------


@dataclass
class SuiteReport:
    reports: list
    required: tuple

    @property
    def passed(self):
        return all(r.passed for r in self.reports if r.name in self.required)

    def __getitem__(self, name):
        for r in self.reports:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self):
        head = [f"suite.passed = {self.passed}", f"suite.required = {','.join(self.required)}"]
        return "\n".join(head + [r.to_text() for r in self.reports]) + "\n"


def required_checks(model):
    monotone = model.config.kind is picnn.Kind.TYPE1M
    return STRUCTURAL + (("monotonicity",) if monotone else ())


def run_suite(model, probe=ProbeConfig(), checks=None):
    """All checks (monotonicity is informative unless the network is monotone by design)."""
    names = CHECKS if checks is None else tuple(checks)
    reports = [CHECK_FUNCTIONS[name](model, probe) for name in names]
    return SuiteReport(reports, tuple(c for c in required_checks(model) if c in names))


# -- negative controls -------------------------------------------------------------------


@dataclass
class MutantModel(PannModel):
    """PANN with an extra term that breaks one property.

    ``mutation`` is one of ``"F11"`` (adds c (F11 - 1)^2, not objective),
    ``"C11"`` (adds c (C11 - 1)^2, objective but anisotropic) or ``"stress"``
    (scales the returned stress by 1 + c, inconsistent with the potential).
    """

    mutation: str = "F11"
    strength: float = 1.0

    def _extra(self, F):
        c = self.strength
        P = np.zeros_like(F)
        if self.mutation == "F11":
            a = F[:, 0, 0] - 1.0
            P[:, 0, 0] = 2.0 * c * a
            return c * a**2, P
        if self.mutation == "C11":
            a = np.einsum("bk,bk->b", F[:, :, 0], F[:, :, 0]) - 1.0
            P[:, :, 0] = (4.0 * c * a)[:, None] * F[:, :, 0]
            return c * a**2, P
        return np.zeros(len(F)), P

    def potential(self, F, t):
        F2 = np.asarray(F, dtype=float).reshape(-1, 3, 3)
        psi = np.atleast_1d(super().potential(F2, t)) + self._extra(F2)[0]
        return psi[0] if np.ndim(F) == 2 else psi

    def stress(self, F, t):
        F2 = np.asarray(F, dtype=float).reshape(-1, 3, 3)
        r = super().stress(F2, t)
        psi, P = np.atleast_1d(r.psi), np.reshape(r.P, (-1, 3, 3))
        dpsi, dP = self._extra(F2)
        psi, P = psi + dpsi, P + dP
        if self.mutation == "stress":
            P = P * (1.0 + self.strength)
        r = type(r)(P, psi)
        return type(r)(P[0], psi[0]) if np.ndim(F) == 2 else r


def _negative_output_weight(model, value=-1e3, seed=0):
    """Force the output weight the potential is most sensitive to strongly negative."""
    params = model.params
    slot = next(s for s in params.slots if s.name == "out.Wxx")
    rng = np.random.default_rng(seed)
    F = kin.sample_deformation(rng, 32)
    t = rng.uniform(0.0, 1.0, (32, model.y_dim))
    g = picnn.grad_params_value(params, kin.invariants(F), t)[:, slot.offset:slot.offset + slot.size]
    theta = params.theta.copy()
    theta[slot.offset + int(np.argmax(np.abs(g).mean(axis=0)))] = value
    return replace(model, params=picnn.PicnnParams(model.config, theta), meta=dict(model.meta))


def make_mutant(model, check):
    """A copy of ``model`` doctored to violate the property probed by ``check``."""
    base = dict(params=model.params, stress_scale=model.stress_scale,
                normalisation=model.normalisation, growth=model.growth, meta=dict(model.meta))
    if check == "objectivity":
        return MutantModel(**base, mutation="F11")
    if check == "isotropy":
        return MutantModel(**base, mutation="C11")
    if check == "normalisation":
        return replace(model, normalisation=False, meta=dict(model.meta))
    if check == "polyconvexity":
        return _negative_output_weight(model)
    if check == "growth":
        return replace(model, growth=False, meta=dict(model.meta))
    if check == "gradients":
        return MutantModel(**base, mutation="stress", strength=1e-3)
    raise ValueError(f"no mutant defined for {check!r}")


def negative_controls(model, probe=ProbeConfig()):
    """Run each structural check on its mutant; returns ``{check: caught}``."""
    out = {}
    for name in STRUCTURAL:
        rep = CHECK_FUNCTIONS[name](make_mutant(model, name), probe)
        out[name] = not rep.passed
    return out
