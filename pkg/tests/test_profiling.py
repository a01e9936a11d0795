import numpy as np
import pytest
from numpy.testing import assert_allclose

from hetmed.core_model import BINARY, CONTINUOUS, dataset_from_arrays
from hetmed.errors import GroupEmpty
from hetmed.mediation import EffectTable
from hetmed.profiling import subgroup_report


def make_table(sig_mask, n):
    nan = np.full(n, np.nan)
    return EffectTable(
        row_id=np.arange(n),
        caie=np.zeros(n),
        cade=np.zeros(n),
        tau=np.zeros(n),
        se_caie=nan,
        se_cade=nan,
        caie_lo=nan,
        caie_hi=nan,
        cade_lo=nan,
        cade_hi=nan,
        significant_caie=sig_mask,
        arm=np.ones(n, dtype=int),
        eval_t=1,
        level=0.95,
        has_inference=True,
    )


def make_dataset(z_extra, kinds, n):
    z = np.column_stack([np.ones(n)] + z_extra)
    t = np.tile([1.0, -1.0], n // 2)
    return dataset_from_arrays(
        z,
        t,
        np.zeros(n),
        np.zeros(n),
        covariate_names=["intercept"] + [f"c{i}" for i in range(len(z_extra))],
        covariate_kind=["continuous"] + kinds,
    )


class TestCohensD:
    def test_identical_means_zero_d(self):
        n = 40
        rng = np.random.default_rng(0)
        col = rng.standard_normal(n // 2)
        d = make_dataset([np.concatenate([col, col])], [CONTINUOUS], n)
        sig = np.zeros(n, dtype=bool)
        sig[: n // 2] = True
        report = subgroup_report(make_table(sig, n), d)
        row = report.rows[0]
        assert_allclose(row.estimate, 0.0, atol=1e-12)
        assert_allclose(row.ci_lo, -row.ci_hi, atol=1e-12)
        assert not row.significant

    def test_planted_shift_recovered(self):
        # +1 SD shift in the significant group, 500/500 members
        n = 1000
        rng = np.random.default_rng(1)
        sig = np.zeros(n, dtype=bool)
        sig[:500] = True
        col = rng.standard_normal(n)
        col[sig] += 1.0
        d = make_dataset([col], [CONTINUOUS], n)
        report = subgroup_report(make_table(sig, n), d)
        row = report.rows[0]
        assert 0.8 <= row.estimate <= 1.2
        assert row.significant

    def test_se_formula(self):
        n = 60
        rng = np.random.default_rng(2)
        col = rng.standard_normal(n)
        sig = np.zeros(n, dtype=bool)
        sig[:20] = True
        report = subgroup_report(make_table(sig, n), make_dataset([col], [CONTINUOUS], n))
        row = report.rows[0]
        d_est = row.estimate
        se = np.sqrt(1 / 20 + 1 / 40 + d_est**2 / (2 * 60))
        from scipy.stats import norm

        z = norm.ppf(0.975)
        assert_allclose(row.ci_hi - row.estimate, z * se, rtol=1e-10)


class TestOddsRatio:
    def test_equal_prevalence_unit_or(self):
        n = 40
        col = np.tile([0.0, 1.0], n // 2)
        sig = np.zeros(n, dtype=bool)
        sig[: n // 2] = True  # first half alternates 0/1 exactly like second
        report = subgroup_report(make_table(sig, n), make_dataset([col], [BINARY], n))
        row = report.rows[0]
        assert_allclose(row.estimate, 1.0)
        assert not row.significant

    def test_zero_cell_flagged_and_corrected(self):
        n = 40
        col = np.zeros(n)
        col[:10] = 1.0  # exposure only among significant units
        sig = np.zeros(n, dtype=bool)
        sig[:20] = True
        report = subgroup_report(make_table(sig, n), make_dataset([col], [BINARY], n))
        row = report.rows[0]
        assert row.zero_cell
        assert np.isfinite(row.estimate) and row.estimate > 1.0
        # Haldane-Anscombe correction: (10.5*20.5)/(10.5*0.5)
        assert_allclose(row.estimate, (10.5 * 20.5) / (10.5 * 0.5))

    def test_association_detected(self):
        n = 400
        rng = np.random.default_rng(3)
        sig = np.zeros(n, dtype=bool)
        sig[:200] = True
        col = np.where(sig, rng.random(n) < 0.7, rng.random(n) < 0.3).astype(float)
        report = subgroup_report(make_table(sig, n), make_dataset([col], [BINARY], n))
        row = report.rows[0]
        assert row.estimate > 1.0
        assert row.significant


def test_group_empty():
    n = 20
    rng = np.random.default_rng(4)
    sig = np.zeros(n, dtype=bool)
    sig[0] = True
    d = make_dataset([rng.standard_normal(n)], [CONTINUOUS], n)
    with pytest.raises(GroupEmpty):
        subgroup_report(make_table(sig, n), d)


def test_mixed_covariates_all_emitted():
    n = 60
    rng = np.random.default_rng(5)
    cols = [rng.standard_normal(n), (rng.random(n) < 0.5).astype(float)]
    d = make_dataset(cols, [CONTINUOUS, BINARY], n)
    sig = np.zeros(n, dtype=bool)
    sig[:25] = True
    report = subgroup_report(make_table(sig, n), d)
    assert len(report.rows) == 2  # intercept skipped, all others reported
    assert report.rows[0].statistic == "cohens_d"
    assert report.rows[1].statistic == "odds_ratio"
    assert report.n_significant == 25
