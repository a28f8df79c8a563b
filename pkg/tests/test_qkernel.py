import numpy as np
import pytest
from conftest import blobs
from oracles import kernel_dense

from optoqml import qkernel, qsim
from optoqml.qkernel import FeatureMapSpec, QuantumKernelSVC

SPEC = FeatureMapSpec()


@pytest.fixture
def points(rng):
    return rng.uniform(0, np.pi, size=(50, 3))


class TestFeatureMap:
    def test_gate_structure(self):
        c = qkernel.feature_map_circuit([0.1, 0.2, 0.3], SPEC)
        assert [g.name for g in c] == ["H"] * 3 + ["RZ"] * 3 + ["ZZ"] * 3
        assert [g.qubits for g in c if g.name == "ZZ"] == [(0, 1), (0, 2), (1, 2)]

    def test_reps_repeat(self):
        assert len(qkernel.feature_map_circuit([0, 0, 0], FeatureMapSpec(reps=2))) == 18

    def test_custom_pairs(self):
        c = qkernel.feature_map_circuit([0, 0, 0], FeatureMapSpec(pairs=((0, 1),)))
        assert sum(g.name == "ZZ" for g in c) == 1

    def test_batched_states_match_circuits(self, points):
        states = qkernel.feature_states(points[:5], SPEC)
        for x, s in zip(points[:5], states):
            np.testing.assert_allclose(s, qsim.run_statevector(qkernel.feature_map_circuit(x, SPEC)), atol=1e-13)

    @pytest.mark.parametrize("kw", [{"n_qubits": 0}, {"reps": 0}, {"pairs": ((1, 0),)}, {"pairs": ((0, 3),)}])
    def test_bad_spec(self, kw):
        with pytest.raises(ValueError):
            FeatureMapSpec(**kw)

    def test_spec_dict(self):
        s = FeatureMapSpec(4, 2)
        assert FeatureMapSpec.from_dict(s.to_dict()) == s

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            qkernel.feature_states(np.zeros((2, 4)), SPEC)
        with pytest.raises(ValueError):
            qkernel.feature_states([[np.nan, 0, 0]], SPEC)


class TestExactKernel:
    def test_self_overlap(self, points):
        for x in points[:10]:
            assert qkernel.kernel_exact(x, x, SPEC) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, points):
        for x, y in zip(points[:10], points[10:20]):
            assert qkernel.kernel_exact(x, y, SPEC) == pytest.approx(qkernel.kernel_exact(y, x, SPEC), abs=1e-13)

    @pytest.mark.parametrize("reps", [1, 2])
    def test_dense_oracle(self, points, reps):
        spec = FeatureMapSpec(reps=reps)
        for x, y in zip(points[:20], points[20:40]):
            assert qkernel.kernel_exact(x, y, spec) == pytest.approx(kernel_dense(x, y, reps), abs=1e-10)

    def test_gram_matches_pointwise(self, points):
        G = qkernel.gram(points[:8], points[8:12], SPEC).values
        for i in range(8):
            for j in range(4):
                assert G[i, j] == pytest.approx(kernel_dense(points[i], points[8 + j]), abs=1e-10)

    def test_psd(self, points):
        g = qkernel.gram(points, spec=SPEC)
        assert g.is_square
        assert g.min_eigenvalue() >= -1e-10
        np.testing.assert_array_equal(g.values, g.values.T)
        np.testing.assert_array_equal(np.diag(g.values), 1.0)
        assert np.all((g.values >= 0) & (g.values <= 1))

    def test_single_row(self):
        g = qkernel.gram([[0.3, 0.2, 0.1]], spec=SPEC)
        assert g.values.tolist() == [[1.0]]

    def test_kernel_circuit_order(self, points):
        # U(x)^dagger U(y) acting on |0>: first amplitude is <x|y>
        x, y = points[0], points[1]
        amp = qsim.run_statevector(qkernel.kernel_circuit(x, y, SPEC))[0]
        sx, sy = qkernel.feature_states(np.stack([x, y]), SPEC)
        assert amp == pytest.approx(np.vdot(sx, sy), abs=1e-12)


class TestShotKernel:
    def test_converges_to_exact(self, points):
        x, y = points[2], points[3]
        est = qkernel.kernel_shots(x, y, SPEC, shots=100000, p_noise=0.0, seed=1)
        assert est == pytest.approx(qkernel.kernel_exact(x, y, SPEC), abs=0.01)

    def test_full_noise_uniform(self, points):
        est = qkernel.kernel_shots(points[0], points[1], SPEC, shots=100000, p_noise=1.0, seed=2)
        assert est == pytest.approx(0.125, abs=0.01)

    def test_noise_contracts_toward_uniform(self, points):
        x = points[4]
        clean = qkernel.pair_distributions([x], [x], SPEC, 0.0)[0, 0]
        noisy = qkernel.pair_distributions([x], [x], SPEC, 0.05)[0, 0]
        assert clean == pytest.approx(1.0, abs=1e-12)
        assert 0.125 < noisy < clean

    def test_per_entry_seed(self, points):
        X, Y = points[:4], points[4:7]
        g = qkernel.gram(X, Y, SPEC, mode="shots", shots=256, p_noise=0.05, seed=9, stream=1)
        for i in range(4):
            for j in range(3):
                want = qkernel.kernel_shots(X[i], Y[j], SPEC, 256, 0.05, seed=[9, 1, i, j])
                assert g.values[i, j] == want

    def test_square_shots(self, points):
        g = qkernel.gram(points[:6], spec=SPEC, mode="shots", shots=128, seed=3)
        np.testing.assert_array_equal(g.values, g.values.T)
        np.testing.assert_array_equal(np.diag(g.values), 1.0)
        assert g.mode["shots"] == 128 and g.mode["p_noise"] == 0.05
        again = qkernel.gram(points[:6], spec=SPEC, mode="shots", shots=128, seed=3)
        np.testing.assert_array_equal(g.values, again.values)

    def test_bad_mode(self, points):
        with pytest.raises(ValueError):
            qkernel.gram(points[:2], spec=SPEC, mode="fast")
        with pytest.raises(ValueError):
            qkernel.gram(points[:2], spec=SPEC, mode="shots", shots=0)


class TestInvariance:
    def test_mirror_pair(self, points):
        # swapping the roles of U and U^dagger conjugates the amplitude, so K is unchanged
        x, y = points[5], points[6]
        assert qkernel.kernel_exact(x, y, SPEC) == pytest.approx(qkernel.kernel_exact(y, x, SPEC), abs=1e-13)


class TestGramCsv:
    def test_round_trip(self, tmp_path, points):
        g = qkernel.gram(points[:5], points[5:8], SPEC, row_ids=list("abcde"), col_ids=[10, 11, 12])
        g.to_csv(tmp_path / "g.csv")
        back = qkernel.GramMatrix.from_csv(tmp_path / "g.csv")
        np.testing.assert_array_equal(back.values, g.values)
        assert back.row_ids == list("abcde") and back.col_ids == ["10", "11", "12"]

    def test_bad_header(self, tmp_path):
        (tmp_path / "g.csv").write_text("x,1\n")
        with pytest.raises(ValueError):
            qkernel.GramMatrix.from_csv(tmp_path / "g.csv")

    def test_eigen_needs_square(self, points):
        with pytest.raises(ValueError):
            qkernel.gram(points[:3], points[3:5], SPEC).min_eigenvalue()


class TestQuantumKernelSVC:
    def test_toy_fits(self):
        X, y = blobs(40, 3, sep=3.0, seed=1)
        X = np.clip(X * 0.4 + 1.5, 0, np.pi)
        est = QuantumKernelSVC(C=10.0).fit(X, y)
        assert est.score(X, y) == 1.0

    def test_shots_mode_runs(self):
        X, y = blobs(24, 3, sep=3.0, seed=2)
        X = np.clip(X * 0.4 + 1.5, 0, np.pi)
        est = QuantumKernelSVC(mode="shots", shots=256).fit(X, y)
        assert est.gram_train_.mode["mode"] == "shots"
        assert est.score(X, y) >= 0.8

    def test_dict_round_trip(self):
        X, y = blobs(20, 3, sep=3.0, seed=3)
        est = QuantumKernelSVC().fit(X, y)
        back = QuantumKernelSVC.from_dict(est.to_dict())
        np.testing.assert_array_equal(back.decision_function(X), est.decision_function(X))
