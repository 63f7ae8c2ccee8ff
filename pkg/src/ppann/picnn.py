"""Partially input-convex networks (Type 1, 2, 3 and the y-monotone Type 1M).

The networks are convex and non-decreasing in the invariant input ``x`` and
unrestricted (or, for Type 1M, non-decreasing) in the parameter input ``y``.
Convexity is maintained by non-negative weights on every path that acts on
``x`` together with Softplus activations.

Derivatives are exact. A small recording tape evaluates the network on a batch
and supports three passes:

* reverse:   d(psi)/dx, d(psi)/dy and d(psi)/d(theta);
* tangent:   forward derivative along an x-direction ``v``;
* reverse-of-tangent: d/d(eps) of the reverse pass at ``x + eps v``, which gives
  the mixed second derivatives ``sum_a v_a d2(psi)/(dx_a d theta)`` needed when
  a potential is calibrated through its gradient only.

Parameters live in one flat vector. The canonical ordering is layer-major
(y-trunk first, then the x-path), weights before biases inside a layer,
row-major inside matrices.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


class Kind(str, enum.Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    TYPE3 = "Type3"
    TYPE1M = "Type1M"


@dataclass(frozen=True)
class PicnnConfig:
    kind: Kind
    x_dim: int = 4
    y_dim: int = 1
    x_widths: tuple = (8, 8)
    y_widths: tuple = (8, 8)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "x_widths", tuple(int(w) for w in self.x_widths))
        object.__setattr__(self, "y_widths", tuple(int(w) for w in self.y_widths))
        if not self.x_widths:
            raise ValueError("at least one hidden x-layer is required")
        n_y = len(self.y_widths)
        if self.kind is Kind.TYPE2 and n_y != len(self.x_widths) - 1:
            raise ValueError("Type2 needs len(y_widths) == len(x_widths) - 1")
        if self.kind is Kind.TYPE3 and n_y != len(self.x_widths):
            raise ValueError("Type3 needs len(y_widths) == len(x_widths)")
        if self.kind in (Kind.TYPE1, Kind.TYPE1M) and n_y == 0:
            raise ValueError("Type1/Type1M need a non-empty y-trunk")


def default_config(kind, y_dim=1):
    """Widths reproducing 272 / 516 / 580 (y_dim=1) and 280 (Type1M, y_dim=2) parameters."""
    if y_dim not in (1, 2):
        raise ValueError(f"unsupported y_dim {y_dim}")
    kind = Kind(kind)
    x_widths = (8, 8, 8) if kind is Kind.TYPE2 else (8, 8)
    return PicnnConfig(kind=kind, y_dim=y_dim, x_widths=x_widths, y_widths=(8, 8))


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple
    offset: int
    nonneg: bool

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def is_bias(self):
        return len(self.shape) == 1


@functools.lru_cache(maxsize=None)
def layout(config):
    """Canonical tuple of parameter slots for ``config``."""
    slots = []
    offset = 0

    def add(name, shape, nonneg=False):
        nonlocal offset
        slots.append(Slot(name, tuple(shape), offset, nonneg))
        offset += int(np.prod(shape))

    kind = config.kind
    monotone = kind is Kind.TYPE1M
    y_dims = [config.y_dim, *config.y_widths]
    for h, w in enumerate(config.y_widths):
        add(f"y{h}.W", (w, y_dims[h]), nonneg=monotone)
        add(f"y{h}.b", (w,))

    xw = config.x_widths
    nx = config.x_dim
    if kind in (Kind.TYPE1, Kind.TYPE1M):
        add("x0.Wxx", (xw[0], nx), nonneg=True)
        add("x0.Wxy", (xw[0], y_dims[-1]), nonneg=monotone)
        add("x0.b", (xw[0],))
        for h in range(1, len(xw)):
            add(f"x{h}.Wxx", (xw[h], xw[h - 1]), nonneg=True)
            add(f"x{h}.b", (xw[h],))
        add("out.Wxx", (1, xw[-1]), nonneg=True)
    elif kind is Kind.TYPE2:
        prev = nx
        for h, w in enumerate(xw):
            add(f"x{h}.Wxx", (w, prev), nonneg=True)
            add(f"x{h}.Wxx0", (w, nx), nonneg=True)
            add(f"x{h}.Wxy", (w, y_dims[h]))
            add(f"x{h}.b", (w,))
            prev = w
        add("out.Wxx", (1, prev), nonneg=True)
        add("out.Wxx0", (1, nx), nonneg=True)
    else:
        prev = nx
        for h, w in enumerate(xw):
            ny = y_dims[h]
            add(f"x{h}.Wxx", (w, prev), nonneg=True)
            add(f"x{h}.Wxx0", (w, nx), nonneg=True)
            add(f"x{h}.Wxy", (w, ny))
            add(f"x{h}.Gx.W", (prev, ny))
            add(f"x{h}.Gx0.W", (nx, ny))
            add(f"x{h}.b", (w,))
            add(f"x{h}.Gx.b", (prev,))
            add(f"x{h}.Gx0.b", (nx,))
            prev = w
        ny = y_dims[len(xw)]
        add("out.Wxx", (1, prev), nonneg=True)
        add("out.Wxx0", (1, nx), nonneg=True)
        add("out.Gx.W", (prev, ny))
        add("out.Gx0.W", (nx, ny))
        add("out.Gx.b", (prev,))
        add("out.Gx0.b", (nx,))
    return tuple(slots)


def count_params(config):
    return sum(s.size for s in layout(config))


@dataclass
class PicnnParams:
    """Flat parameter vector tied to a configuration."""

    config: PicnnConfig
    theta: np.ndarray
    slots: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.slots = layout(self.config)
        self.theta = np.asarray(self.theta, dtype=float)
        n = sum(s.size for s in self.slots)
        if self.theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {self.theta.shape}")

    def __getitem__(self, name):
        for s in self.slots:
            if s.name == name:
                return self.theta[s.offset:s.offset + s.size].reshape(s.shape)
        raise KeyError(name)

    @property
    def nonneg_mask(self):
        mask = np.zeros(self.theta.shape, dtype=bool)
        for s in self.slots:
            if s.nonneg:
                mask[s.offset:s.offset + s.size] = True
        return mask

    def is_feasible(self):
        return bool(np.all(self.theta[self.nonneg_mask] >= 0.0))

    def copy(self, theta=None):
        return PicnnParams(self.config, self.theta.copy() if theta is None else theta)


INIT_SCHEMES = ("glorot", "fan_in")


def init(config, seed=0, scheme="glorot"):
    """Random weights with zero biases.

    ``glorot``: uniform on +-sqrt(6 / (fan_in + fan_out)), constrained entries
    clipped at zero (roughly half start inactive). ``fan_in``: uniform on
    +-sqrt(1 / fan_in), absolute value taken on constrained entries.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    theta = np.zeros(count_params(config))
    for s in layout(config):
        if s.is_bias:
            continue
        fan_out, fan_in = s.shape
        if scheme == "glorot":
            w = rng.uniform(-1.0, 1.0, size=s.size) * np.sqrt(6.0 / (fan_in + fan_out))
            w = np.maximum(w, 0.0) if s.nonneg else w
        else:
            w = rng.uniform(-1.0, 1.0, size=s.size) * np.sqrt(1.0 / fan_in)
            w = np.abs(w) if s.nonneg else w
        theta[s.offset:s.offset + s.size] = w
    return PicnnParams(config, theta)


def project_nonneg(params):
    """Clamp constrained entries at zero; free entries are untouched."""
    theta = params.theta.copy()
    mask = params.nonneg_mask
    theta[mask] = np.maximum(theta[mask], 0.0)
    return PicnnParams(params.config, theta)


# --------------------------------------------------------------------------
# activations: value, first and second derivative


def _softplus(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.logaddexp(0.0, z), s, s * (1.0 - s)


def _sigmoid(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    d = s * (1.0 - s)
    return s, d, d * (1.0 - 2.0 * s)


def _relu(z):
    d = (z > 0).astype(float)
    return z * d, d, np.zeros_like(z)


_ACTIVATIONS = {"softplus": _softplus, "sigmoid": _sigmoid, "relu": _relu}


def softplus(z):
    return np.logaddexp(0.0, z)


# --------------------------------------------------------------------------
# recording tape


class _Node:
    __slots__ = ("op", "args", "val", "tan", "adj", "adj_tan", "d1", "d2")

    def __init__(self, op, args, val):
        self.op = op
        self.args = args
        self.val = val
        self.tan = None
        self.adj = None
        self.adj_tan = None


def _acc(a, b):
    if b is None:
        return a
    return b if a is None else a + b


class Tape:
    """Eager forward evaluation on a batch, recorded for the derivative passes."""

    def __init__(self, params, x, y):
        self.params = params
        self.theta = params.theta
        self.slots = {s.name: s for s in params.slots}
        self.nodes = []
        self.x = self._input(np.atleast_2d(np.asarray(x, dtype=float)))
        self.y = self._input(np.atleast_2d(np.asarray(y, dtype=float)))
        self.batch = max(len(self.x.val), len(self.y.val))
        if len(self.x.val) != self.batch:
            self.x.val = np.broadcast_to(self.x.val, (self.batch, self.x.val.shape[1]))
        if len(self.y.val) != self.batch:
            self.y.val = np.broadcast_to(self.y.val, (self.batch, self.y.val.shape[1]))
        self.out = _build(self, params.config)
        self._reversed = False

    # -- graph construction ------------------------------------------------
    def _input(self, val):
        node = _Node("in", (), val)
        self.nodes.append(node)
        return node

    def _w(self, name):
        s = self.slots[name]
        return self.theta[s.offset:s.offset + s.size].reshape(s.shape)

    def lin(self, terms, bias=None):
        """sum_k node_k @ W_k.T (+ b); ``terms`` is a list of (node, slot-name)."""
        val = 0.0
        for node, name in terms:
            val = val + node.val @ self._w(name).T
        if bias is not None:
            val = val + self._w(bias)
        out = _Node("lin", (terms, bias), np.broadcast_to(val, (self.batch, np.shape(val)[-1])))
        self.nodes.append(out)
        return out

    def act(self, node, kind):
        f, d1, d2 = _ACTIVATIONS[kind](node.val)
        out = _Node("act", (node,), f)
        out.d1, out.d2 = d1, d2
        self.nodes.append(out)
        return out

    def mul(self, a, b):
        out = _Node("mul", (a, b), a.val * b.val)
        self.nodes.append(out)
        return out

    # -- values ----------------------------------------------------------------
    @property
    def value(self):
        return self.out.val[:, 0]

    # -- reverse pass ------------------------------------------------------
    def backward(self, seed=None, param_grads=False, per_sample=False):
        """Primal reverse sweep. Returns the parameter gradient if requested."""
        for n in self.nodes:
            n.adj = None
        seed = np.ones(self.batch) if seed is None else np.asarray(seed, dtype=float)
        self.out.adj = np.broadcast_to(seed, (self.batch,))[:, None].copy()
        grads = self._zero_grads(per_sample) if param_grads else None
        for n in reversed(self.nodes):
            if n.adj is None or n.op == "in":
                continue
            if n.op == "lin":
                terms, bias = n.args
                for a, name in terms:
                    W = self._w(name)
                    a.adj = _acc(a.adj, n.adj @ W)
                    if grads is not None:
                        self._add_outer(grads, name, n.adj, a.val, per_sample)
                if bias is not None and grads is not None:
                    self._add_bias(grads, bias, n.adj, per_sample)
            elif n.op == "act":
                (a,) = n.args
                a.adj = _acc(a.adj, n.d1 * n.adj)
            else:
                a, b = n.args
                a.adj = _acc(a.adj, n.adj * b.val)
                b.adj = _acc(b.adj, n.adj * a.val)
        self._reversed = True
        return grads

    def grad_x(self):
        if not self._reversed:
            self.backward()
        return _dense(self.x.adj, self.x.val.shape)

    def grad_y(self):
        if not self._reversed:
            self.backward()
        return _dense(self.y.adj, self.y.val.shape)

    # -- forward-over-reverse ----------------------------------------------
    def mixed(self, direction, per_sample=False):
        """Directional derivative of the reverse sweep along x-direction ``direction``.

        Returns ``(g_theta, g_y)`` with ``g_theta = sum_a v_a d2psi/(dx_a dtheta)``
        (summed over the batch unless ``per_sample``) and
        ``g_y = sum_a v_a d2psi/(dx_a dy)`` per sample. Requires the primal
        reverse sweep with unit seed, which is run if missing.
        """
        if not self._reversed:
            self.backward()
        v = np.broadcast_to(np.asarray(direction, dtype=float), self.x.val.shape)
        for n in self.nodes:
            n.tan = None
            n.adj_tan = None
        self.x.tan = v
        for n in self.nodes:
            if n.op == "lin":
                tan = None
                for a, name in n.args[0]:
                    if a.tan is not None:
                        tan = _acc(tan, a.tan @ self._w(name).T)
                n.tan = tan
            elif n.op == "act":
                a = n.args[0]
                n.tan = None if a.tan is None else n.d1 * a.tan
            elif n.op == "mul":
                a, b = n.args
                t = None
                if a.tan is not None:
                    t = a.tan * b.val
                if b.tan is not None:
                    t = _acc(t, a.val * b.tan)
                n.tan = t
        grads = self._zero_grads(per_sample)
        for n in reversed(self.nodes):
            if n.op == "in" or n.adj is None:
                continue
            at = n.adj_tan
            if n.op == "lin":
                terms, bias = n.args
                for a, name in terms:
                    if at is not None:
                        a.adj_tan = _acc(a.adj_tan, at @ self._w(name))
                        self._add_outer(grads, name, at, a.val, per_sample)
                    if a.tan is not None:
                        self._add_outer(grads, name, n.adj, a.tan, per_sample)
                if bias is not None and at is not None:
                    self._add_bias(grads, bias, at, per_sample)
            elif n.op == "act":
                (a,) = n.args
                t = None if at is None else n.d1 * at
                if a.tan is not None:
                    t = _acc(t, n.d2 * a.tan * n.adj)
                a.adj_tan = _acc(a.adj_tan, t)
            else:
                a, b = n.args
                ta = None if at is None else at * b.val
                tb = None if at is None else at * a.val
                if b.tan is not None:
                    ta = _acc(ta, n.adj * b.tan)
                if a.tan is not None:
                    tb = _acc(tb, n.adj * a.tan)
                a.adj_tan = _acc(a.adj_tan, ta)
                b.adj_tan = _acc(b.adj_tan, tb)
        return grads, _dense(self.y.adj_tan, self.y.val.shape)

    # -- gradient bookkeeping ------------------------------------------------
    def _zero_grads(self, per_sample):
        n = self.theta.size
        return np.zeros((self.batch, n)) if per_sample else np.zeros(n)

    def _add_outer(self, grads, name, left, right, per_sample):
        s = self.slots[name]
        sl = slice(s.offset, s.offset + s.size)
        if per_sample:
            grads[:, sl] += np.einsum("bi,bj->bij", left, right).reshape(self.batch, -1)
        else:
            grads[sl] += (left.T @ right).ravel()

    def _add_bias(self, grads, name, adj, per_sample):
        s = self.slots[name]
        sl = slice(s.offset, s.offset + s.size)
        if per_sample:
            grads[:, sl] += adj
        else:
            grads[sl] += adj.sum(axis=0)


def _dense(a, shape):
    return np.zeros(shape) if a is None else np.array(np.broadcast_to(a, shape))


def _build(tp, config):
    kind = config.kind
    y = tp.y
    ys = [y]
    for h in range(len(config.y_widths)):
        act = "sigmoid" if (kind is Kind.TYPE1M and h == 0) else "softplus"
        y = tp.act(tp.lin([(y, f"y{h}.W")], f"y{h}.b"), act)
        ys.append(y)
    x0 = tp.x
    n_hidden = len(config.x_widths)
    if kind in (Kind.TYPE1, Kind.TYPE1M):
        x = tp.act(tp.lin([(x0, "x0.Wxx"), (ys[-1], "x0.Wxy")], "x0.b"), "softplus")
        for h in range(1, n_hidden):
            x = tp.act(tp.lin([(x, f"x{h}.Wxx")], f"x{h}.b"), "softplus")
        return tp.lin([(x, "out.Wxx")])
    if kind is Kind.TYPE2:
        x = x0
        for h in range(n_hidden):
            terms = [(x, f"x{h}.Wxx"), (x0, f"x{h}.Wxx0"), (ys[h], f"x{h}.Wxy")]
            x = tp.act(tp.lin(terms, f"x{h}.b"), "softplus")
        return tp.lin([(x, "out.Wxx"), (x0, "out.Wxx0")])
    x = x0
    for h in range(n_hidden + 1):
        p = "out" if h == n_hidden else f"x{h}"
        gx = tp.act(tp.lin([(ys[h], f"{p}.Gx.W")], f"{p}.Gx.b"), "relu")
        gx0 = tp.act(tp.lin([(ys[h], f"{p}.Gx0.W")], f"{p}.Gx0.b"), "relu")
        terms = [(tp.mul(x, gx), f"{p}.Wxx"), (tp.mul(x0, gx0), f"{p}.Wxx0")]
        if h == n_hidden:
            return tp.lin(terms)
        terms.append((ys[h], f"{p}.Wxy"))
        x = tp.act(tp.lin(terms, f"{p}.b"), "softplus")


# --------------------------------------------------------------------------
# functional surface


@dataclass
class EvalResult:
    value: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray | None = None


def forward(params, x, y):
    return Tape(params, x, y).value


def evaluate(params, x, y, with_grad_y=False):
    tape = Tape(params, x, y)
    tape.backward()
    return EvalResult(tape.value, tape.grad_x(), tape.grad_y() if with_grad_y else None)


def grad_x(params, x, y):
    return Tape(params, x, y).grad_x()


def grad_params_value(params, x, y):
    """Per-sample d(psi)/d(theta), shape (batch, n_params)."""
    tape = Tape(params, x, y)
    return tape.backward(param_grads=True, per_sample=True)


def grad_params_of_grad_x(params, x, y):
    """Per-sample d2(psi)/(dx_a dtheta), shape (batch, x_dim, n_params)."""
    tape = Tape(params, x, y)
    tape.backward()
    nx = params.config.x_dim
    out = np.empty((tape.batch, nx, params.theta.size))
    for a in range(nx):
        e = np.zeros(nx)
        e[a] = 1.0
        out[:, a, :] = tape.mixed(e, per_sample=True)[0]
    return out


# --------------------------------------------------------------------------
# serialization


def _header_lines(config):
    return [
        f"kind {config.kind.value}",
        f"x_dim {config.x_dim}",
        f"y_dim {config.y_dim}",
        "x_widths " + " ".join(str(w) for w in config.x_widths),
        "y_widths " + " ".join(str(w) for w in config.y_widths),
    ]


def dumps(params, extra=None):
    """Versioned text format; parameters in canonical order with 17 significant digits."""
    lines = [f"ppann-picnn {FORMAT_VERSION}", *_header_lines(params.config)]
    for key, value in (extra or {}).items():
        lines.append(f"meta {key} {value}")
    lines.append(f"params {params.theta.size}")
    lines.extend("%.17g" % v for v in params.theta)
    return "\n".join(lines) + "\n"


def loads(text):
    """Inverse of :func:`dumps`; returns ``(params, meta)``."""
    lines = text.splitlines()
    magic = lines[0].split()
    if magic[0] != "ppann-picnn" or int(magic[1]) != FORMAT_VERSION:
        raise ValueError("not a ppann model file (or unsupported version)")
    fields = {}
    meta = {}
    i = 1
    while not lines[i].startswith("params "):
        key, _, rest = lines[i].partition(" ")
        if key == "meta":
            mkey, _, mval = rest.partition(" ")
            meta[mkey] = mval
        else:
            fields[key] = rest
        i += 1
    n = int(lines[i].split()[1])
    theta = np.array([float(v) for v in lines[i + 1:i + 1 + n]])
    config = PicnnConfig(
        kind=Kind(fields["kind"]),
        x_dim=int(fields["x_dim"]),
        y_dim=int(fields["y_dim"]),
        x_widths=tuple(int(w) for w in fields["x_widths"].split()),
        y_widths=tuple(int(w) for w in fields.get("y_widths", "").split()),
    )
    return PicnnParams(config, theta), meta
