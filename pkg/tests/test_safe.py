import numpy as np
import pytest
import scipy.linalg

from tandemga.plant import PlantParams, derivatives
from tandemga.safe import (LinearModel, RiccatiError, care_residual, design_gain,
                           linearize, load_gain, safe_action, save_gain, solve_care)
from tandemga.supervisor import HypercubeLimits, vertex_recovery

DEFAULT = PlantParams()
Q = np.diag([100.0, 1.0, 100.0, 1.0])


@pytest.fixture(scope="module")
def gain():
    return design_gain(linearize(DEFAULT), Q, 1.0)


def fd_jacobian(pp, h=1e-6):
    A = np.empty((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        A[:, j] = (derivatives(e, 0.0, pp) - derivatives(-e, 0.0, pp)) / (2 * h)
    # input is volts away from neutral; outside the dead zone dF/dV = Cv
    dF = (derivatives(np.zeros(4), h, pp) - derivatives(np.zeros(4), -h, pp)) / (2 * h)
    return A, (dF * pp.Cv).reshape(4, 1)


class TestLinearize:
    def test_kinematic_row(self):
        np.testing.assert_array_equal(linearize(DEFAULT).A[0], [0, 1, 0, 0])
        np.testing.assert_array_equal(linearize(DEFAULT).A[2], [0, 0, 0, 1])

    @pytest.mark.parametrize("pp", [DEFAULT, PlantParams(M=2.0, m=0.3, l=0.6, Cf=1.0, Cv=3.0)])
    def test_matches_finite_differences(self, pp):
        model = linearize(pp)
        A_fd, B_fd = fd_jacobian(pp)
        np.testing.assert_allclose(model.A, A_fd, atol=1e-4)
        np.testing.assert_allclose(model.B, B_fd, atol=1e-4)

    def test_light_rod_limit(self):
        # As m -> 0 the cart no longer feels the rod, but the rod is still carried
        # kinematically: theta'' -> -(3 / 2l) p''.
        pp = PlantParams(m=1e-9)
        model = linearize(pp)
        assert model.A[1, 2] == pytest.approx(0.0, abs=1e-6)
        assert model.B[1, 0] == pytest.approx(pp.Cv / pp.M, rel=1e-6)
        assert model.B[3, 0] == pytest.approx(-1.5 / pp.l * pp.Cv / pp.M, rel=1e-6)
        assert model.A[3, 2] == pytest.approx(1.5 * pp.g / pp.l, rel=1e-6)

    def test_controllable(self):
        assert linearize(DEFAULT).controllability_rank() == 4


class TestSolveCare:
    def test_scalar_integrator(self):
        P = solve_care([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_uncontrollable_pair_is_rejected(self):
        model = LinearModel(np.zeros((4, 4)), np.eye(4)[:, :1])
        with pytest.raises(RiccatiError):
            design_gain(model, np.eye(4), 1.0)

    def test_agrees_with_scipy(self):
        m = linearize(DEFAULT)
        P = solve_care(m.A, m.B, Q, np.eye(1))
        ref = scipy.linalg.solve_continuous_are(m.A, m.B, Q, np.eye(1))
        np.testing.assert_allclose(P, ref, rtol=1e-7, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_residual_on_random_plants(self, seed):
        rng = np.random.default_rng(seed)
        pp = PlantParams(M=rng.uniform(0.5, 3), m=rng.uniform(0.05, 0.5), l=rng.uniform(0.2, 1.0),
                         Cf=rng.uniform(0, 10), Cv=rng.uniform(1, 8))
        m = linearize(pp)
        P = solve_care(m.A, m.B, Q, np.eye(1))
        assert np.max(np.abs(care_residual(m.A, m.B, Q, np.eye(1), P))) <= 1e-8
        assert np.all(np.linalg.eigvalsh(P) > 0)


class TestDesignGain:
    def test_closed_loop_stable(self, gain):
        eig = gain.closed_loop_eigenvalues(linearize(DEFAULT))
        assert eig.shape == (4,)
        assert np.all(eig.real < 0)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            design_gain(linearize(DEFAULT), -Q, 1.0)
        with pytest.raises(ValueError):
            design_gain(linearize(DEFAULT), Q, 0.0)

    def test_vertex_recovery(self, gain):
        checks = vertex_recovery(DEFAULT, gain, HypercubeLimits())
        assert len(checks) == 16
        assert all(c["recovered"] for c in checks)
        assert all(c["time_s"] <= 5.0 for c in checks)

    def test_inflated_box_fails_recovery(self, gain):
        checks = vertex_recovery(DEFAULT, gain, HypercubeLimits().scaled(3.0))
        assert not all(c["recovered"] for c in checks)


class TestSafeAction:
    def test_target_maps_to_neutral(self, gain):
        assert safe_action(gain, np.zeros(4), np.zeros(4), DEFAULT) == DEFAULT.v_neutral

    def test_far_states_saturate(self, gain):
        lo_hi = {safe_action(gain, s * np.array([5.0, 5.0, 5.0, 5.0]), np.zeros(4), DEFAULT)
                 for s in (1, -1)}
        assert lo_hi == {DEFAULT.v_min, DEFAULT.v_max}

    def test_linear_near_target(self, gain):
        eps = 1e-4
        got = safe_action(gain, [eps, 0, 0, 0], np.zeros(4), DEFAULT)
        assert got == pytest.approx(DEFAULT.v_neutral - eps * gain.K[0], rel=1e-14)

    def test_relative_to_target(self, gain):
        target = np.array([0.1, 0.0, 0.0, 0.0])
        assert safe_action(gain, target, target, DEFAULT) == DEFAULT.v_neutral


def test_gain_file_roundtrip(tmp_path, gain):
    path = save_gain(tmp_path / "gain.txt", gain, "header line")
    text = path.read_text().splitlines()
    assert text[0] == "# header line"
    assert len(text[1].split()) == 4
    np.testing.assert_array_equal(load_gain(path).K, gain.K)


def test_gain_file_rejects_wrong_width(tmp_path):
    (tmp_path / "g.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError):
        load_gain(tmp_path / "g.txt")
