import json

import numpy as np
import pytest
from scipy.integrate import quad

from optoqml import corpus, spectra
from optoqml.corpus import Dataset, SchemaError, SurrogateParams

VISIBLE = (1.65, 3.26)  # eV


@pytest.fixture(scope="module")
def synth():
    return corpus.synth_dataset(SurrogateParams(), 0.2, 7)


class TestSynthSystem:
    def test_pristine_dominant_line(self):
        s = corpus.synth_system(0, SurrogateParams(), 1)
        assert abs(s.strongest()[0][0] - 7.12) <= 0.1

    def test_doped_visible_line(self):
        s = corpus.synth_system(1, SurrogateParams(), 1).window(*VISIBLE)
        assert abs(s.strongest()[0][0] - 3.06) <= 0.1

    def test_doped_dominant_line(self):
        s = corpus.synth_system(1, SurrogateParams(), 1)
        assert abs(s.strongest()[0][0] - 6.14) <= 0.1

    def test_red_shift_band(self):
        p = SurrogateParams()
        diff = spectra.spectral_difference(corpus.synth_system(1, p, 3), corpus.synth_system(0, p, 3), 1)
        assert -1.5 <= diff.delta_e[0] <= -0.3

    def test_zero_jitter_ignores_seed(self):
        p = SurrogateParams(noise_rel=0.0)
        a, b = corpus.synth_system(1, p, 1), corpus.synth_system(1, p, 99)
        np.testing.assert_array_equal(a.omega, b.omega)
        np.testing.assert_array_equal(a.strength, b.strength)

    def test_jitter_bounded(self):
        p = SurrogateParams(noise_rel=0.01)
        clean = corpus.synth_system(0, SurrogateParams(noise_rel=0.0), 0)
        noisy = corpus.synth_system(0, p, 5)
        # sorting may swap neighbours, so compare sorted multisets loosely
        assert np.max(np.abs(np.sort(noisy.omega) / np.sort(clean.omega) - 1)) <= 0.0101

    def test_bad_label(self):
        with pytest.raises(ValueError):
            corpus.synth_system(2, SurrogateParams(), 0)


class TestRecords:
    def test_empty_spectrum(self):
        p = SurrogateParams()
        recs = corpus.build_records(spectra.ExcitationSpectrum("none", [], []), p, 0.2, 0)
        assert len(recs) == p.grid_points
        for r in recs:
            assert r.kappa == 0 and r.eps2 == 0 and r.alpha == 0
            assert r.eps1 == r.n ** 2

    def test_pristine_count_and_invariants(self):
        p = SurrogateParams()
        recs = corpus.build_records(corpus.synth_system(0, p, 1), p, 0.2, 0)
        assert len(recs) == 1589
        for r in recs:
            r.check()
            assert r.label == 0

    def test_kappa_scale_hits_max(self):
        p = SurrogateParams(alpha_floor=(0.0, 0.0))
        s = corpus.synth_system(1, p, 2)
        kappa = np.array([r.kappa for r in corpus.build_records(s, p, 0.2, 1)])
        assert kappa.max() == pytest.approx(p.kappa_max, rel=1e-12)

    def test_no_coupling_gives_background_n(self):
        p = SurrogateParams(n_coupling=0.0)
        recs = corpus.build_records(corpus.synth_system(1, p, 2), p, 0.2, 1)
        grid = p.grid()
        n = np.array([r.n for r in recs])
        np.testing.assert_allclose(n, p.background_n[0] + p.background_n[1] * grid, rtol=1e-15)

    def test_descriptors_positive(self, synth):
        _, ds = synth
        assert np.all(ds.X > 0)


class TestDispersion:
    @pytest.mark.parametrize("energy", [0.5, 2.8, 3.0, 3.3, 7.5])
    def test_against_principal_value(self, energy):
        w, s = 3.0, 0.2
        line = spectra.ExcitationSpectrum("one", [w], [1.0])
        got = corpus._dispersion(line, np.array([energy]), s)[0]

        def odd(u):
            return np.exp(-(u - w) ** 2 / (2 * s * s)) - np.exp(-(u + w) ** 2 / (2 * s * s))

        lim = w + 12 * s
        pv, _ = quad(odd, -lim, lim, weight="cauchy", wvar=energy, limit=400)
        assert got == pytest.approx(pv / np.pi, abs=1e-8)

    def test_linear_in_strength(self):
        grid = np.linspace(0.1, 9.0, 40)
        a = spectra.ExcitationSpectrum("a", [2.0, 5.0], [1.0, 0.5])
        b = spectra.ExcitationSpectrum("b", [2.0, 5.0], [2.0, 1.0])
        np.testing.assert_allclose(2 * corpus._dispersion(a, grid, 0.15), corpus._dispersion(b, grid, 0.15))


class TestDataset:
    def test_counts(self, synth):
        systems, ds = synth
        assert len(ds) == 3178
        assert ds.feature_names == list(corpus.FEATURES)
        assert np.bincount(ds.y).tolist() == [1589, 1589]
        assert [s.system_id for s in systems] == ["CaF2", "CaF2:Er"]

    def test_deterministic_csv(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            corpus.export_csv(corpus.synth_dataset(SurrogateParams(), 0.15, 11)[1], tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(["a"], [[np.nan]], [0])
        with pytest.raises(ValueError):
            Dataset(["a"], [[1.0]], [2])
        with pytest.raises(ValueError):
            Dataset(["a", "b"], [[1.0]], [0])


class TestCsv:
    def test_table_fixture(self, table_csv):
        ds = corpus.ingest_csv(table_csv)
        assert ds.X.shape == (8, 6)
        assert ds.feature_names == ["E", "eps1", "eps2", "n", "kappa", "alpha"]

    def test_round_trip(self, tmp_path, rng):
        ds = Dataset(list(corpus.FEATURES), rng.lognormal(size=(25, 6)), rng.integers(0, 2, 25))
        corpus.export_csv(ds, tmp_path / "d.csv")
        back = corpus.ingest_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)

    def test_subset_columns(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("kappa,E_eV,label\n0.1,2.0,1\n0.2,3.0,0\n")
        ds = corpus.ingest_csv(path)
        assert ds.feature_names == ["kappa", "E"]

    def test_missing_label(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("E_eV,kappa\n1,2\n")
        with pytest.raises(SchemaError, match="label"):
            corpus.ingest_csv(path)

    def test_unknown_column(self, tmp_path):
        path = tmp_path / "u.csv"
        path.write_text("E_eV,colour,label\n1,2,0\n")
        with pytest.raises(SchemaError, match="colour"):
            corpus.ingest_csv(path)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("E_eV,label\n1,0\nx,1\n")
        with pytest.raises(SchemaError, match=":3:"):
            corpus.ingest_csv(path)

    def test_indices_round_trip(self, tmp_path):
        corpus.write_indices([5, 1, 9], tmp_path / "i.idx")
        assert corpus.read_indices(tmp_path / "i.idx").tolist() == [5, 1, 9]


class TestSplit:
    def test_paper_sizes(self, synth):
        _, ds = synth
        parts = corpus.split(ds, (0.72, 0.19, 0.09), seed=3)
        sizes = [p.size for p in parts]
        assert 286 <= sizes[2] <= 290
        assert sum(sizes) == len(ds)

    def test_partition(self, synth):
        _, ds = synth
        parts = corpus.split(ds, seed=4)
        allrows = np.concatenate(parts)
        assert np.unique(allrows).size == allrows.size == len(ds)

    def test_stratified(self, synth):
        _, ds = synth
        whole = ds.y.mean()
        for rows in corpus.split(ds, seed=5):
            assert abs(ds.y[rows].mean() - whole) <= 1 / rows.size

    def test_deterministic(self, synth):
        _, ds = synth
        a, b = corpus.split(ds, seed=6), corpus.split(ds, seed=6)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = corpus.split(ds, seed=7)
        assert not np.array_equal(a[2], c[2])

    def test_unstratified_partition(self, synth):
        _, ds = synth
        parts = corpus.split(ds, seed=1, stratified=False)
        assert sum(p.size for p in parts) == len(ds)

    @pytest.mark.parametrize("fr", [(1.0, 0.0, 0.0), (0.5, 0.3, 0.3)])
    def test_bad_fractions(self, synth, fr):
        with pytest.raises(ValueError):
            corpus.split(synth[1], fr)

    def test_keeps_index(self, synth):
        _, ds = synth
        train, _, _ = corpus.split_dataset(ds, seed=2)
        np.testing.assert_array_equal(ds.X[train.index], train.X)


class TestSubsample:
    def test_qsvm_sizes(self, synth):
        _, ds = synth
        train = corpus.split_dataset(ds, seed=1)[0]
        sub = corpus.subsample(train, 200, seed=2)
        assert len(sub) == 200
        assert np.bincount(sub.y).tolist() == [100, 100]
        assert len(np.unique(sub.index)) == 200

    def test_hardware_slices(self, synth):
        _, ds = synth
        assert len(corpus.subsample(ds, 30, 1)) == 30
        assert len(corpus.subsample(ds, 15, 1)) == 15

    def test_full_count_is_permutation(self, rng):
        ds = Dataset(["a"], rng.normal(size=(12, 1)), np.r_[np.zeros(6), np.ones(6)])
        sub = corpus.subsample(ds, 12, seed=3)
        assert sorted(sub.index.tolist()) == list(range(12))

    def test_errors(self, synth):
        with pytest.raises(ValueError):
            corpus.subsample(synth[1], 0)
        with pytest.raises(ValueError):
            corpus.subsample(synth[1], 10 ** 6)


class TestParams:
    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            SurrogateParams.from_dict({"nope": 1})

    def test_dict_round_trip(self, tmp_path):
        p = SurrogateParams(noise_rel=0.02, n_coupling=0.5)
        path = tmp_path / "p.json"
        path.write_text(json.dumps(p.to_dict()))
        assert SurrogateParams.from_file(path) == p

    @pytest.mark.parametrize("kw", [{"noise_rel": 0.5}, {"n_coupling": -1}, {"alpha_floor": (-1, 0)},
                                    {"background_n": (0.1, -1.0)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SurrogateParams(**kw)
