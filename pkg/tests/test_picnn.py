import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppann import picnn

KINDS = [("Type1", 1), ("Type2", 1), ("Type3", 1), ("Type1M", 2)]
seeds = st.integers(0, 10_000)


def _inputs(rng, n, y_dim):
    x = rng.uniform([3.0, 3.0, 0.2, -2.0], [6.0, 6.0, 4.0, -0.4], size=(n, 4))
    y = rng.uniform(0.0, 1.0, size=(n, y_dim))
    return x, y


@pytest.mark.parametrize("kind,y_dim,expected", [("Type1", 1, 272), ("Type2", 1, 516),
                                                 ("Type3", 1, 580), ("Type1M", 2, 280)])
def test_default_parameter_counts(kind, y_dim, expected):
    assert picnn.count_params(picnn.default_config(kind, y_dim)) == expected


@pytest.mark.parametrize("kwargs", [
    dict(kind="Type2", x_widths=(8, 8), y_widths=(8, 8)),
    dict(kind="Type3", x_widths=(8, 8), y_widths=(8,)),
    dict(kind="Type1", x_widths=(8,), y_widths=()),
    dict(kind="Type1", x_widths=(), y_widths=(8,)),
])
def test_inconsistent_configs_rejected(kwargs):
    with pytest.raises(ValueError):
        picnn.PicnnConfig(**kwargs)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        picnn.default_config("Type4")


def test_layout_is_contiguous():
    for kind, y_dim in KINDS:
        slots = picnn.layout(picnn.default_config(kind, y_dim))
        offsets = [s.offset for s in slots]
        assert offsets[0] == 0
        assert all(a.offset + a.size == b.offset for a, b in zip(slots, slots[1:]))
        # y-trunk comes first, weights before biases within a layer
        first_x = next(i for i, s in enumerate(slots) if s.name.startswith("x"))
        assert all(s.name.startswith("y") for s in slots[:first_x])


@pytest.mark.parametrize("scheme", picnn.INIT_SCHEMES)
@pytest.mark.parametrize("kind,y_dim", KINDS)
def test_init_is_feasible_and_seeded(kind, y_dim, scheme):
    cfg = picnn.default_config(kind, y_dim)
    a = picnn.init(cfg, 5, scheme)
    b = picnn.init(cfg, 5, scheme)
    assert a.is_feasible()
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, picnn.init(cfg, 6, scheme).theta)
    for s in a.slots:
        if s.is_bias:
            assert not np.any(a[s.name])


def test_project_nonneg_only_touches_constrained_entries(rng):
    cfg = picnn.default_config("Type3")
    p = picnn.PicnnParams(cfg, rng.standard_normal(picnn.count_params(cfg)))
    q = picnn.project_nonneg(p)
    mask = p.nonneg_mask
    assert q.is_feasible()
    assert np.array_equal(q.theta[~mask], p.theta[~mask])
    assert np.array_equal(q.theta[mask], np.maximum(p.theta[mask], 0.0))


def _fd(f, z, h=1e-6):
    out = []
    for k in range(z.shape[-1]):
        e = np.zeros_like(z)
        e[..., k] = h
        out.append((f(z + e) - f(z - e)) / (2 * h))
    return np.stack(out, axis=-1)


@pytest.mark.parametrize("kind,y_dim", KINDS)
def test_input_gradients_match_finite_differences(kind, y_dim, rng):
    p = picnn.init(picnn.default_config(kind, y_dim), 3, "fan_in")
    x, y = _inputs(rng, 6, y_dim)
    res = picnn.evaluate(p, x, y, with_grad_y=True)
    assert np.allclose(res.grad_x, _fd(lambda z: picnn.forward(p, z, y), x), rtol=1e-6, atol=1e-8)
    assert np.allclose(res.grad_y, _fd(lambda z: picnn.forward(p, x, z), y), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("kind,y_dim", KINDS)
def test_parameter_gradients_match_finite_differences(kind, y_dim, rng):
    cfg = picnn.default_config(kind, y_dim)
    p = picnn.init(cfg, 4, "fan_in")
    x, y = _inputs(rng, 5, y_dim)
    G = picnn.grad_params_value(p, x, y)
    M = picnn.grad_params_of_grad_x(p, x, y)
    idx = rng.choice(p.theta.size, 25, replace=False)
    h = 1e-6
    for k in idx:
        e = np.zeros(p.theta.size)
        e[k] = h
        pp, pm = picnn.PicnnParams(cfg, p.theta + e), picnn.PicnnParams(cfg, p.theta - e)
        fd_val = (picnn.forward(pp, x, y) - picnn.forward(pm, x, y)) / (2 * h)
        fd_gx = (picnn.grad_x(pp, x, y) - picnn.grad_x(pm, x, y)) / (2 * h)
        assert np.allclose(G[:, k], fd_val, rtol=1e-6, atol=1e-8)
        assert np.allclose(M[:, :, k], fd_gx, rtol=1e-5, atol=1e-7)


@given(seeds, st.sampled_from(KINDS))
def test_convex_along_lines_in_x(seed, kind_dim):
    kind, y_dim = kind_dim
    rng = np.random.default_rng(seed)
    p = picnn.init(picnn.default_config(kind, y_dim), seed, "fan_in")
    xa, y = _inputs(rng, 32, y_dim)
    xb, _ = _inputs(rng, 32, y_dim)
    lam = rng.uniform(0.0, 1.0, (32, 1))
    mid = picnn.forward(p, lam * xa + (1 - lam) * xb, y)
    chord = lam[:, 0] * picnn.forward(p, xa, y) + (1 - lam[:, 0]) * picnn.forward(p, xb, y)
    assert np.all(mid <= chord + 1e-10 * np.maximum(1.0, np.abs(chord)))


@given(seeds, st.sampled_from(KINDS))
def test_non_decreasing_in_x(seed, kind_dim):
    kind, y_dim = kind_dim
    rng = np.random.default_rng(seed)
    p = picnn.init(picnn.default_config(kind, y_dim), seed)
    x, y = _inputs(rng, 32, y_dim)
    assert np.all(picnn.grad_x(p, x, y) >= 0.0)


@given(seeds)
def test_type1m_monotone_in_y(seed):
    rng = np.random.default_rng(seed)
    p = picnn.init(picnn.default_config("Type1M", 2), seed)
    x, y = _inputs(rng, 32, 2)
    assert np.all(picnn.evaluate(p, x, y, with_grad_y=True).grad_y >= 0.0)


def test_batch_rows_are_independent(rng):
    p = picnn.init(picnn.default_config("Type2"), 0)
    x, y = _inputs(rng, 10, 1)
    full = picnn.forward(p, x, y)
    single = np.array([picnn.forward(p, x[i:i + 1], y[i:i + 1])[0] for i in range(10)])
    assert np.allclose(full, single, rtol=0, atol=1e-14)


@pytest.mark.parametrize("kind,y_dim", KINDS)
def test_serialisation_round_trip_is_exact(kind, y_dim):
    p = picnn.init(picnn.default_config(kind, y_dim), 11)
    text = picnn.dumps(p, {"note": "x"})
    q, meta = picnn.loads(text)
    assert q.config == p.config
    assert np.array_equal(q.theta, p.theta)
    assert meta["note"] == "x"
    assert picnn.dumps(q, {"note": "x"}) == text


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        picnn.loads("hello\n")
