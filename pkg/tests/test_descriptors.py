from __future__ import annotations

import io

import numpy as np
import pytest

from semlatent.corpus import load_reference_corpus
from semlatent.descriptors import (
    PROPERTY_NAMES,
    CovarianceModel,
    Fingerprint,
    compute_properties,
    default_threshold,
    filter_faulty_positives,
    fit_covariance,
    mahalanobis,
    morgan_fingerprint,
    properties_of,
    tanimoto_distance,
    tanimoto_smiles,
    write_property_csv,
)
from semlatent.mutation import generate_positive_set
from semlatent.smiles import parse


class TestProperties:
    def test_methane(self):
        p = properties_of("C")
        assert p.molecular_weight == pytest.approx(12.011 + 4 * 1.008)
        assert p.molecular_weight == pytest.approx(16.04, abs=0.01)
        assert (p.heavy_atom_count, p.ring_count, p.aromatic_ring_count) == (1, 0, 0)
        assert (p.hbd_count, p.hba_count, p.rotatable_bond_count, p.halogen_count) == (0, 0, 0, 0)
        assert p.fraction_csp3 == 1.0 and p.heteroatom_fraction == 0.0

    def test_benzene(self):
        p = properties_of("c1ccccc1")
        assert p.aromatic_ring_count == 1 and p.fraction_csp3 == 0.0 and p.ring_count == 1

    def test_ethanol(self):
        p = properties_of("CCO")
        assert p.hbd_count == 1 and p.hba_count == 1

    def test_naphthalene_and_indole(self):
        assert properties_of("c1ccc2ccccc2c1").aromatic_ring_count == 2
        assert properties_of("c1ccc2[nH]ccc2c1").aromatic_ring_count == 2

    def test_rotatable(self):
        assert properties_of("CCCC").rotatable_bond_count == 1
        assert properties_of("C1CCCCC1").rotatable_bond_count == 0
        assert properties_of("c1ccccc1CC").rotatable_bond_count == 1

    def test_ibuprofen_weight(self):
        assert properties_of("CC(Cc1ccc(cc1)C(C(=O)O)C)C").molecular_weight == pytest.approx(206.28, abs=0.02)

    def test_permutation_invariance(self, rng):
        for s in load_reference_corpus()[:30]:
            g = parse(s)
            h = g.permuted(rng.permutation(len(g.atoms)).tolist())
            assert compute_properties(g) == compute_properties(h)

    def test_ranges(self):
        for s in load_reference_corpus():
            v = properties_of(s).as_array()
            assert (v >= 0).all()
            assert 0 <= v[7] <= 1 and 0 <= v[9] <= 1

    def test_csv(self):
        buf = io.StringIO()
        write_property_csv([("C", properties_of("C"))], buf)
        header = buf.getvalue().splitlines()[0].split(",")
        assert header == ["smiles", *PROPERTY_NAMES] and len(PROPERTY_NAMES) == 10


class TestMahalanobis:
    def test_default_threshold(self):
        assert default_threshold() == pytest.approx(4.8176, abs=1e-4)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_covariance([np.zeros(10)] * 10)

    def test_identical_vectors(self):
        m = fit_covariance([np.ones(10)] * 11)
        assert np.all(m.cov == 0) and m.eps > 0
        assert mahalanobis(np.zeros(10), np.ones(10), m) > 0

    def test_monte_carlo_diagonal(self):
        rng = np.random.default_rng(0)
        var = np.linspace(0.5, 5.0, 10)
        m = fit_covariance(list(rng.normal(size=(10_000, 10)) * np.sqrt(var)))
        assert np.allclose(np.diag(m.cov), var, rtol=0.05)

    def test_closed_form(self):
        cov = np.eye(10)
        cov[0, 0] = 4.0
        m = CovarianceModel(np.zeros(10), cov, 0.0)
        d = np.zeros(10)
        d[0] = 2.0
        assert mahalanobis(d, np.zeros(10), m) == pytest.approx(1.0, abs=1e-12)

    def test_identity_is_euclidean(self, rng):
        m = CovarianceModel(np.zeros(10), np.eye(10), 0.0)
        for _ in range(100):
            x, y = rng.normal(size=10), rng.normal(size=10)
            assert abs(mahalanobis(x, y, m) - np.linalg.norm(x - y)) <= 1e-12

    def test_symmetry(self, rng):
        m = fit_covariance(list(rng.normal(size=(50, 10))))
        x, y = rng.normal(size=10), rng.normal(size=10)
        assert mahalanobis(x, y, m) == pytest.approx(mahalanobis(y, x, m), abs=1e-12)
        assert mahalanobis(x, x, m) == 0.0


class TestFilter:
    @pytest.fixture
    def setup(self):
        corpus = load_reference_corpus()
        model = fit_covariance([properties_of(s) for s in corpus])
        anchor = parse(corpus[0])
        recs = generate_positive_set(anchor, 10, np.random.default_rng(0))
        return anchor, recs, model

    def test_infinite_threshold_keeps_all(self, setup):
        anchor, recs, model = setup
        out = filter_faulty_positives(anchor, recs, model, float("inf"))
        assert all(r.verdict == "KEPT" for r in out)
        assert [r.smiles for r in out] == [r.smiles for r in recs]

    def test_zero_threshold_rejects_changed(self, setup):
        anchor, recs, model = setup
        out = filter_faulty_positives(anchor, recs, model, 0.0)
        assert all(r.verdict == "FAULTY" for r in out)

    def test_monotone_sweep(self, setup):
        anchor, recs, model = setup
        prev = None
        for t in np.linspace(10, 0, 10):
            kept = {r.smiles for r in filter_faulty_positives(anchor, recs, model, t) if r.verdict == "KEPT"}
            if prev is not None:
                assert kept <= prev
            prev = kept


class TestFingerprint:
    def test_deterministic_and_nonempty(self):
        a = morgan_fingerprint(parse("CCO"))
        assert a == morgan_fingerprint(parse("OCC"))
        assert a.popcount() >= 1

    def test_distinct_environments(self):
        assert morgan_fingerprint(parse("CC")).bits != morgan_fingerprint(parse("c1ccccc1")).bits

    def test_tanimoto_arithmetic(self):
        a = Fingerprint(0b0001_1111, 16)
        b = Fingerprint(0b1110_0011, 16)
        # |a and b| = 2, |a or b| = 8
        assert tanimoto_distance(a, b) == pytest.approx(0.75)

    def test_tanimoto_edges(self):
        assert tanimoto_distance(Fingerprint(0), Fingerprint(0)) == 0.0
        assert tanimoto_distance(Fingerprint(0b01), Fingerprint(0b10)) == 1.0
        assert tanimoto_smiles("CCO", "OCC") == 0.0

    def test_symmetric_bounded(self):
        mols = load_reference_corpus()[:15]
        for a in mols:
            for b in mols:
                d = tanimoto_smiles(a, b)
                assert 0.0 <= d <= 1.0
                assert d == tanimoto_smiles(b, a)
