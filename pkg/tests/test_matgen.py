import numpy as np
import pytest
from scipy import optimize

from ppann import kinematics as kin
from ppann import matgen


def test_case_parametrisations():
    assert np.isclose(matgen.mu_scalar("A", 0.0), 0.5)
    assert np.isclose(matgen.mu_scalar("A", 1.0), 2.5)
    assert np.isclose(matgen.mu_scalar("B", 0.5), 0.5)
    assert np.isclose(matgen.mu_scalar("C", 0.5), 2.5)
    mat = matgen.material("B", 0.0)
    assert np.isclose(mat.lam, 100.0 - 2.0 / 3.0 * 2.5)


def test_print_parametrisation():
    assert np.isclose(matgen.mu_print(np.array([1.0, 1.0])), 2.5 * np.tanh(1.7 * np.log(6.0)))
    assert np.isclose(matgen.mu_print(np.array([0.0, 0.0])), 2.5 * np.tanh(1.7 * 0.36 * np.log(1.5)))
    assert matgen.material("print", np.array([0.5, 0.5])).lam == matgen.LAMBDA_PRINT


@pytest.mark.parametrize("mu", matgen.ISO_MU)
def test_iso_curve_hits_target(mu):
    ts = matgen.iso_curve(mu)
    assert ts.shape == (matgen.ISO_SAMPLES, 2)
    assert np.all((ts >= 0) & (ts <= 1))
    assert np.allclose(matgen.mu_print(ts), mu, rtol=1e-12)


def test_neo_hooke_stress_is_gradient(rng):
    mat = matgen.NeoHookeMaterial(1.3, 40.0)
    F = kin.sample_deformation(rng, 4)
    P = matgen.nh_stress(mat, F)
    h = 1e-6
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] = h
            fd = (matgen.nh_potential(mat, F + E) - matgen.nh_potential(mat, F - E)) / (2 * h)
            assert np.allclose(P[:, i, j], fd, rtol=1e-6, atol=1e-6)
    assert np.allclose(matgen.nh_stress(mat, np.eye(3)), 0.0)


@pytest.mark.parametrize("stretch", [0.6, 1.0, 1.7, 2.5])
def test_uniaxial_lateral_stretch_against_bracketing_root(stretch):
    mat = matgen.material("C", 0.3)

    def lateral(s):
        F = np.diag([stretch, s, s])
        return matgen.nh_stress(mat, F)[1, 1]

    s_ref = optimize.brentq(lateral, 0.2, 3.0, xtol=1e-15)
    F = matgen.solve_uniaxial(mat, stretch)
    assert np.isclose(F[1, 1], s_ref, rtol=1e-12)
    P = matgen.nh_stress(mat, F)
    assert abs(P[1, 1]) <= 1e-12 and abs(P[2, 2]) <= 1e-12


def test_load_paths_traction_free_where_expected():
    mat = matgen.material("A", 0.7)
    for kind, zero in [("uniaxial", [(1, 1), (2, 2)]), ("equibiaxial", [(2, 2)]),
                       ("mixed", [(1, 1), (2, 2)])]:
        _, F = matgen.load_path(kind, mat, mixed="stress-free")
        P = matgen.nh_stress(mat, F)
        for i, j in zero:
            assert np.max(np.abs(P[:, i, j])) <= 1e-12, kind
    _, F = matgen.load_path("shear", mat)
    assert np.allclose(kin.det(F), 1.0)


def test_default_mixed_path_is_fixed_geometry():
    _, F = matgen.load_path("mixed", matgen.material("A", 0.0))
    assert np.allclose(F[-1], [[1.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


@pytest.mark.parametrize("study,role,size", [
    ("I", "calib", 1818), ("I", "test", 19695), ("II", "calib", 1212), ("II", "test", 19897),
    ("vector", "calib", 2727), ("vector", "test", 20200)])
def test_dataset_sizes(study, role, size):
    ds = matgen.build(study, role, "B")
    assert len(ds) == size
    assert ds.F.shape == (size, 3, 3) and ds.P.shape == (size, 3, 3)


def test_study_test_sets_exclude_calibration_parameters():
    cal, test = matgen.build("II", "calib"), matgen.build("II", "test")
    assert not set(np.unique(cal.t_id)) & set(np.unique(test.t_id))
    assert sorted(np.unique(cal.t[:, 0])) == [0.0, 0.1, 0.9, 1.0]


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        matgen.build("III", "calib")
    with pytest.raises(ValueError):
        matgen.build("I", "train")
    with pytest.raises(ValueError):
        matgen.build("I", "test", mixed="sideways")


def test_csv_round_trip_is_byte_stable(tmp_path):
    ds = matgen.build("vector", "calib")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    matgen.write_csv(ds, a)
    back = matgen.read_csv(a)
    matgen.write_csv(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(back.F, ds.F) and np.array_equal(back.P, ds.P)
    assert np.array_equal(back.t, ds.t) and np.array_equal(back.t_id, ds.t_id)
