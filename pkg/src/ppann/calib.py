"""Stress-only (Sobolev) calibration of PANN models.

Every loss used here has the form ``sum_i c_i ||P_model(F_i; t_i) - P_i||_F^2``
with per-tuple coefficients ``c_i``:

* group weighting (scalar studies): ``c_i = 1 / (9 N w_g)``, ``w_g`` the mean
  stress norm of the (load path, t) group of tuple ``i``;
* tuple weighting (vector study): ``c_i = 1 / (9 N (||P_i|| + 1))``;
* unit weighting (reported metrics): ``c_i = 1 / (9 N)``.

Stresses are compared in normalised units ``P / stress_scale``.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import kinematics as kin
from . import picnn
from .errors import NumericalError
from .pann import NORMALISATION_WEIGHTS, PannModel, growth_term_dJ

log = logging.getLogger(__name__)

NEG_INF = float("-inf")


# -- loss weights ------------------------------------------------------------------


def group_coefficients(dataset, scale=1.0):
    P = dataset.P / scale
    norms = np.linalg.norm(P, axis=(1, 2))
    keys = np.stack([dataset.path_id, dataset.t_id], axis=1)
    _, group = np.unique(keys, axis=0, return_inverse=True)
    group = group.reshape(-1)
    w = np.bincount(group, weights=norms) / np.bincount(group)
    if np.any(w == 0):
        warnings.warn("all-zero stress group in dataset; using weight 1 for it", RuntimeWarning)
        w[w == 0] = 1.0
    return 1.0 / (9.0 * len(P) * w[group])


def tuple_coefficients(dataset, scale=1.0):
    norms = np.linalg.norm(dataset.P / scale, axis=(1, 2))
    return 1.0 / (9.0 * len(norms) * (norms + 1.0))


def unit_coefficients(dataset):
    return np.full(len(dataset), 1.0 / (9.0 * len(dataset)))


def _mse(model, dataset, coef):
    P = model.stress(dataset.F, dataset.t).P
    r = (P - dataset.P) / model.stress_scale
    return float(np.sum(coef * np.einsum("bij,bij->b", r, r)))


def weighted_mse_study1(model, dataset):
    return _mse(model, dataset, group_coefficients(dataset, model.stress_scale))


def weighted_mse_vector(model, dataset):
    return _mse(model, dataset, tuple_coefficients(dataset, model.stress_scale))


def unweighted_mse(model, dataset, physical=False):
    mse = _mse(model, dataset, unit_coefficients(dataset))
    return mse * model.stress_scale**2 if physical else mse


def safe_log10(value):
    return NEG_INF if value == 0.0 else float(np.log10(value))


def unweighted_log10_mse(model, dataset, physical=False):
    """log10 of the unit-weight MSE; ``-inf`` for an exact fit."""
    return safe_log10(unweighted_mse(model, dataset, physical))


def per_t_mse(model, dataset):
    """Unit-weight MSE for every distinct parameter value, in dataset order."""
    P = model.stress(dataset.F, dataset.t).P
    r = (P - dataset.P) / model.stress_scale
    err = np.einsum("bij,bij->b", r, r) / 9.0
    ids, first = np.unique(dataset.t_id, return_index=True)
    order = np.argsort(first)
    rows = []
    for k in ids[order]:
        sel = dataset.t_id == k
        rows.append((int(k), dataset.t[sel][0], float(err[sel].mean())))
    return rows


# -- batched loss and gradient ----------------------------------------------------


class LossBatch:
    """Everything about a dataset that does not depend on the network weights."""

    def __init__(self, dataset, coef, scale=1.0, normalisation=True, growth=True):
        F = dataset.F
        J = kin.det(F)
        self.n = len(F)
        self.x = kin.invariants(F)
        self.dI = kin.invariant_gradients(F)
        self.K = J[:, None, None] * kin.inv_transpose(F)
        self.vol = growth_term_dJ(J) if growth else np.zeros(self.n)
        self.t = np.asarray(dataset.t, dtype=float)
        self.P = dataset.P / scale
        self.coef = np.asarray(coef, dtype=float)
        self.normalisation = normalisation
        if normalisation:
            self.t_unique, inv = np.unique(self.t, axis=0, return_inverse=True)
            self.t_index = inv.reshape(-1)
            n_u = len(self.t_unique)
            self.x_all = np.vstack([self.x, np.tile(kin.IDENTITY_INVARIANTS, (n_u, 1))])
            self.y_all = np.vstack([self.t, self.t_unique])
        else:
            self.x_all, self.y_all = self.x, self.t

    @classmethod
    def for_model(cls, model, dataset, coef):
        return cls(dataset, coef, model.stress_scale, model.normalisation, model.growth)


def loss_and_grad(config, theta, batch, need_grad=True):
    """Weighted stress loss and its exact gradient with respect to ``theta``."""
    params = picnn.PicnnParams.__new__(picnn.PicnnParams)
    params.config, params.theta, params.slots = config, theta, picnn.layout(config)
    tape = picnn.Tape(params, batch.x_all, batch.y_all)
    tape.backward()
    g = tape.grad_x()
    n = batch.n
    vol = batch.vol
    if batch.normalisation:
        offset = g[n:] @ NORMALISATION_WEIGHTS
        vol = vol - offset[batch.t_index]
    P = np.einsum("ba,baij->bij", g[:n], batch.dI) + vol[:, None, None] * batch.K
    R = P - batch.P
    loss = float(np.sum(batch.coef * np.einsum("bij,bij->b", R, R)))
    if not need_grad:
        return loss, None
    dP = (2.0 * batch.coef)[:, None, None] * R
    v = np.einsum("bij,baij->ba", dP, batch.dI)
    if batch.normalisation:
        w = np.einsum("bij,bij->b", dP, batch.K)
        u = -np.bincount(batch.t_index, weights=w, minlength=len(batch.t_unique))
        v = np.vstack([v, u[:, None] * NORMALISATION_WEIGHTS])
    grad, _ = tape.mixed(v)
    return loss, grad


# -- optimizers --------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


BETA1, BETA2, EPS = 0.9, 0.999, 1e-7


def _adam_update(theta, grad, state, lr, mask):
    state.step += 1
    state.m = BETA1 * state.m + (1.0 - BETA1) * grad
    state.v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    m_hat = state.m / (1.0 - BETA1**state.step)
    v_hat = state.v / (1.0 - BETA2**state.step)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + EPS)
    theta[mask] = np.maximum(theta[mask], 0.0)
    return theta


def adam_step(params, grads, state, lr):
    """One Adam update followed by projection onto the non-negative constraints."""
    theta = _adam_update(params.theta.copy(), np.asarray(grads, dtype=float), state, lr,
                         params.nonneg_mask)
    return picnn.PicnnParams(params.config, theta), state


# -- training ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "adam"  # "adam" | "quasi-newton"
    learning_rate: float = 0.002
    epochs: int = 7000
    seed: int = 0
    restarts: int = 5
    normalize_stress: bool = False
    study: str = "I"  # "I" | "II" | "vector"
    normalisation: bool = True
    init: str = "glorot"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("adam", "quasi-newton"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def weighting(self):
        return "tuple" if self.study == "vector" else "group"


@dataclass
class RestartResult:
    index: int
    seed: int
    status: str = "ok"
    loss_history: list = field(default_factory=list, repr=False)
    final_loss: float = float("nan")
    calib_log10_mse: float = float("nan")
    test_log10_mse: float = float("nan")
    calib_log10_mse_physical: float = float("nan")
    test_log10_mse_physical: float = float("nan")
    wall_time: float = 0.0
    excluded: bool = False
    note: str = ""


@dataclass
class TrainReport:
    config: TrainConfig
    kind: str
    n_params: int
    stress_scale: float
    restarts: list

    def kept(self):
        return [r for r in self.restarts if r.status == "ok" and not r.excluded]

    @property
    def mean_calib_log10_mse(self):
        return float(np.mean([r.calib_log10_mse for r in self.kept()]))

    @property
    def mean_test_log10_mse(self):
        return float(np.mean([r.test_log10_mse for r in self.kept()]))

    @property
    def best(self):
        ok = [r for r in self.restarts if r.status == "ok"]
        return min(ok, key=lambda r: r.test_log10_mse)

    def metrics_text(self):
        """Key-value metrics; deterministic (no timings)."""
        lines = [f"kind = {self.kind}", f"n_params = {self.n_params}",
                 f"stress_scale = {self.stress_scale:.17g}"]
        for k, v in asdict(self.config).items():
            lines.append(f"config.{k} = {v}")
        for r in self.restarts:
            p = f"restart.{r.index}"
            lines += [f"{p}.seed = {r.seed}", f"{p}.status = {r.status}",
                      f"{p}.excluded = {r.excluded}",
                      f"{p}.final_weighted_loss = {r.final_loss:.17g}",
                      f"{p}.calib_log10_mse = {r.calib_log10_mse:.17g}",
                      f"{p}.test_log10_mse = {r.test_log10_mse:.17g}",
                      f"{p}.calib_log10_mse_physical = {r.calib_log10_mse_physical:.17g}",
                      f"{p}.test_log10_mse_physical = {r.test_log10_mse_physical:.17g}"]
            if r.note:
                lines.append(f"{p}.note = {r.note}")
        if self.kept():
            lines += [f"mean_kept.calib_log10_mse = {self.mean_calib_log10_mse:.17g}",
                      f"mean_kept.test_log10_mse = {self.mean_test_log10_mse:.17g}",
                      f"best.restart = {self.best.index}",
                      f"best.calib_log10_mse = {self.best.calib_log10_mse:.17g}",
                      f"best.test_log10_mse = {self.best.test_log10_mse:.17g}"]
        return "\n".join(lines) + "\n"

    def loss_csv(self):
        n = max((len(r.loss_history) for r in self.restarts), default=0)
        head = "epoch," + ",".join(f"restart_{r.index}" for r in self.restarts)
        rows = [head]
        for e in range(n):
            vals = [("%.17g" % r.loss_history[e]) if e < len(r.loss_history) else ""
                    for r in self.restarts]
            rows.append(f"{e}," + ",".join(vals))
        return "\n".join(rows) + "\n"


def calibration_coefficients(config, dataset, scale):
    if config.weighting == "tuple":
        return tuple_coefficients(dataset, scale)
    return group_coefficients(dataset, scale)


def stress_scale_for(dataset):
    return float(np.mean(np.linalg.norm(dataset.P, axis=(1, 2))))


def _run_adam(pconfig, theta, batch, lr, epochs, mask, history):
    state = AdamState.zeros(theta.size)
    for _ in range(epochs):
        loss, grad = loss_and_grad(pconfig, theta, batch)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite loss at epoch {len(history)}")
        history.append(loss)
        theta = _adam_update(theta, grad, state, lr, mask)
    return theta


def _run_quasi_newton(pconfig, theta, batch, config, mask, history):
    bounds = [(0.0, None) if m else (None, None) for m in mask]

    def fun(th):
        loss, grad = loss_and_grad(pconfig, th, batch)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite loss during quasi-Newton iteration")
        return loss, grad

    def record(xk):
        history.append(loss_and_grad(pconfig, xk, batch, need_grad=False)[0])

    res = optimize.minimize(fun, theta, jac=True, method="L-BFGS-B", bounds=bounds,
                            callback=record,
                            options={"maxiter": config.epochs, "maxfun": 4 * config.epochs,
                                     "ftol": 0.0, "gtol": 0.0, "maxcor": 20})
    theta = np.where(mask, np.maximum(res.x, 0.0), res.x)
    note = ""
    msg = str(res.message)
    if "ABNORMAL" in msg.upper() and len(history) < config.epochs:
        remaining = config.epochs - len(history)
        note = f"line search failed after {len(history)} iterations; Adam for {remaining} epochs"
        theta = _run_adam(pconfig, theta, batch, config.learning_rate, remaining, mask, history)
    return theta, note


def train_single(config, calib, test, pconfig, seed, index=0, scale=1.0):
    """One restart; returns ``(RestartResult, PannModel)``."""
    result = RestartResult(index=index, seed=seed)
    params = picnn.init(pconfig, seed, config.init)
    model = PannModel(params, stress_scale=scale, normalisation=config.normalisation)
    coef = calibration_coefficients(config, calib, scale)
    batch = LossBatch.for_model(model, calib, coef)
    mask = params.nonneg_mask
    start = time.perf_counter()
    history = []
    try:
        if config.optimizer == "adam":
            theta = _run_adam(pconfig, params.theta.copy(), batch, config.learning_rate,
                              config.epochs, mask, history)
        else:
            theta, result.note = _run_quasi_newton(pconfig, params.theta.copy(), batch, config,
                                                   mask, history)
    except NumericalError as exc:
        result.status = "aborted"
        result.note = str(exc)
        result.loss_history = history
        result.wall_time = time.perf_counter() - start
        log.warning("restart %d aborted: %s", index, exc)
        return result, model
    model = model.with_theta(theta)
    result.loss_history = history
    result.final_loss = loss_and_grad(pconfig, theta, batch, need_grad=False)[0]
    result.calib_log10_mse = unweighted_log10_mse(model, calib)
    result.calib_log10_mse_physical = unweighted_log10_mse(model, calib, physical=True)
    if test is not None:
        result.test_log10_mse = unweighted_log10_mse(model, test)
        result.test_log10_mse_physical = unweighted_log10_mse(model, test, physical=True)
    result.wall_time = time.perf_counter() - start
    return result, model


def train(config, calib, test, pconfig, workers=1):
    """Independent restarts with seeds ``seed + r``; the worst test loss is flagged excluded."""
    scale = stress_scale_for(calib) if config.normalize_stress else 1.0
    seeds = [config.seed + r for r in range(config.restarts)]
    jobs = [(config, calib, test, pconfig, s, r, scale) for r, s in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_train_job, jobs))
    else:
        out = [_train_job(j) for j in jobs]
    results = [o[0] for o in out]
    models = [o[1] for o in out]
    ok = [r for r in results if r.status == "ok"]
    if len(ok) > 1 and test is not None:
        worst = max(ok, key=lambda r: r.test_log10_mse)
        worst.excluded = True
    for r, m in zip(results, models):
        m.meta.update(restart=r.index, seed=r.seed, study=config.study,
                      optimizer=config.optimizer, learning_rate=config.learning_rate,
                      epochs=config.epochs)
    report = TrainReport(config, pconfig.kind.value, picnn.count_params(pconfig), scale, results)
    return report, models


def _train_job(job):
    return train_single(*job)


def quasi_newton_train(config, calib, test, pconfig, workers=1):
    config = TrainConfig(**{**asdict(config), "optimizer": "quasi-newton"})
    return train(config, calib, test, pconfig, workers)
