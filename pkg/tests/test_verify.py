import numpy as np
import pytest

from ppann import pann, verify

KINDS = [("Type1", 1), ("Type2", 1), ("Type3", 1), ("Type1M", 2)]
PROBE = verify.ProbeConfig(n_samples=32, poly_samples=1024)


@pytest.fixture(params=KINDS, ids=[k for k, _ in KINDS])
def model(request):
    kind, y_dim = request.param
    return pann.new_model(kind, y_dim, seed=5, scheme="fan_in")


@pytest.mark.parametrize("check", verify.STRUCTURAL)
def test_structural_checks_pass(model, check):
    rep = verify.CHECK_FUNCTIONS[check](model, PROBE)
    assert rep.passed, rep.to_text()
    assert rep.n_samples > 0 and not rep.witness


@pytest.mark.parametrize("check", verify.STRUCTURAL)
def test_mutants_are_caught_with_witness(model, check):
    rep = verify.CHECK_FUNCTIONS[check](verify.make_mutant(model, check), PROBE)
    assert not rep.passed
    assert rep.witness
    assert f"{check}.witness." in rep.to_text()


def test_isotropy_mutant_is_still_objective():
    m = verify.make_mutant(pann.new_model("Type1", seed=0, scheme="fan_in"), "isotropy")
    assert verify.check_objectivity(m, PROBE).passed
    assert not verify.check_isotropy(m, PROBE).passed


def test_witness_reproduces_violation():
    m = verify.make_mutant(pann.new_model("Type2", seed=1, scheme="fan_in"), "objectivity")
    rep = verify.check_objectivity(m, PROBE)
    F, t, Q = (rep.witness[k] for k in ("F", "t", "Q"))
    assert abs(m.potential(Q @ F, t) - m.potential(F, t)) > 1e-6


@pytest.mark.parametrize("check", verify.CHECKS)
def test_zero_samples_is_vacuous(check):
    rep = verify.CHECK_FUNCTIONS[check](pann.new_model("Type1"), verify.ProbeConfig(n_samples=0))
    assert rep.passed and rep.no_evidence and "no evidence" in rep.note


def test_zero_network_passes_everything():
    suite = verify.run_suite(pann.zero_model(), PROBE)
    assert suite.passed
    # constant in t: zero derivative counts as monotone
    assert suite["monotonicity"].passed


def test_growth_only_potential_is_convex_on_a_dense_scan():
    J = np.linspace(0.05, 5.0, 4001)
    g = pann.growth_term(J)
    assert np.all(g[1:-1] <= 0.5 * (g[:-2] + g[2:]) + 1e-12)


def test_monotonicity_required_only_for_monotone_networks():
    assert "monotonicity" in verify.required_checks(pann.new_model("Type1M", 2))
    assert "monotonicity" not in verify.required_checks(pann.new_model("Type3"))


def test_non_monotone_model_fails_monotonicity():
    m = pann.new_model("Type1", seed=0, scheme="fan_in")
    theta = m.theta.copy()
    slot = next(s for s in m.params.slots if s.name == "y0.W")
    theta[slot.offset:slot.offset + slot.size] *= -20.0
    rep = verify.check_monotonicity_params(m.with_theta(theta), PROBE)
    assert not rep.passed and "dpsi_dt" in rep.witness


def test_reports_are_deterministic(model):
    a = verify.run_suite(model, PROBE).to_text()
    b = verify.run_suite(model, PROBE).to_text()
    assert a == b
    c = verify.run_suite(model, verify.ProbeConfig(n_samples=32, poly_samples=1024, seed=1)).to_text()
    assert a != c


def test_probe_config_validation():
    with pytest.raises(ValueError):
        verify.ProbeConfig(fd_tol=0.0)
    with pytest.raises(ValueError):
        verify.ProbeConfig(n_samples=-1)


def test_negative_controls_helper():
    caught = verify.negative_controls(pann.new_model("Type3", seed=2, scheme="fan_in"), PROBE)
    assert set(caught) == set(verify.STRUCTURAL) and all(caught.values())
