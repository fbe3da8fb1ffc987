import numpy as np
import pytest
from scipy.integrate import quad

from gwharmonic import beta, rde
from gwharmonic.rngs import task_stream


@pytest.fixture(scope="module")
def ones():
    return rde.constant_cloud(10**4, 1.0)


def test_kappa_all_ones_closed_form(ones):
    rng = task_stream(1, "beta", 1)
    for r in (1.0, 1.5, 3.0, 10.0):
        assert beta.kappa(ones, r, 10**4, rng) == pytest.approx(r / (r + 1), abs=1e-12)


def test_kappa_symmetry_oracle(solved_cloud):
    # kappa(1) = E[S/(S+T)] = 1/2 exactly, by exchangeability of (S, T)
    rng = task_stream(2, "beta", 2)
    assert beta.kappa(solved_cloud, 1.0, 10**6, rng) == pytest.approx(0.5, abs=0.002)


def test_kappa_increasing_in_r(solved_cloud):
    rng = task_stream(3, "beta", 3)
    vals = [beta.kappa(solved_cloud, r, 10**6, rng) for r in (1.0, 2.0, 4.0, 8.0)]
    assert np.all(np.diff(vals) > 0)
    assert 0.0 < vals[0] < 1.0


def test_kappa_domain(solved_cloud):
    rng = task_stream(4, "beta", 4)
    with pytest.raises(ValueError):
        beta.kappa(solved_cloud, 0.5, 100, rng)


def test_beta_moment_all_ones_diagnostic(ones):
    rng = task_stream(5, "beta", 5)
    est = beta.beta_moment(ones, 10**5, rng)
    assert est.value == pytest.approx(0.0, abs=1e-12)
    assert est.std_error == pytest.approx(0.0, abs=1e-12)


def test_beta_triple_all_ones_diagnostic(ones):
    rng = task_stream(6, "beta", 6)
    est = beta.beta_triple(ones, 10**5, rng)
    assert est.value == pytest.approx(np.log(2.0), abs=1e-12)


def test_beta_shift_all_ones_quad_oracle(ones):
    # s = 1/2, kappa-hat(r) = r/(r+1) exactly; value reduces to
    # log2 * E[2/(3+U)] / E[|log(1-U)| 2/(3+U)], both 1-d integrals
    rng = task_stream(7, "beta", 7)
    est = beta.beta_shift(ones, 2 * 10**5, rng)
    num = np.log(2.0) * quad(lambda u: 2.0 / (3.0 + u), 0, 1)[0]
    den = quad(lambda u: -np.log(1.0 - u) * 2.0 / (3.0 + u), 0, 1)[0]
    expect = num / den
    assert est.value == pytest.approx(expect, abs=4 * est.std_error + 1e-4)


def test_beta_moment_duplication_invariance(solved_cloud):
    sub = rde.ParticleCloud(solved_cloud.samples[: 10**5].copy())
    dup = rde.ParticleCloud(np.sort(np.tile(sub.samples, 2)))
    e1 = beta.beta_moment(sub, 10**6, task_stream(8, "beta", 8))
    e2 = beta.beta_moment(dup, 10**6, task_stream(9, "beta", 9))
    assert sub.samples.mean() == pytest.approx(dup.samples.mean(), abs=1e-14)
    assert e1.value == pytest.approx(e2.value, abs=3 * np.hypot(e1.std_error, e2.std_error))


def test_estimators_agree_near_paper_value(solved_cloud):
    rng = task_stream(10, "beta", 10)
    cv = beta.cross_validate(solved_cloud, 2 * 10**6, rng)
    for est in cv.estimates:
        assert 0.75 < est.value < 0.82
        assert 0.0 < est.value < 1.0
        assert est.std_error > 0
    assert not cv.flagged
    assert np.max(cv.z_matrix) <= 3.0


def test_cross_validate_flags_all_ones(ones):
    rng = task_stream(11, "beta", 11)
    cv = beta.cross_validate(ones, 10**5, rng)
    assert cv.flagged  # moment says 0, triple says log 2


def test_cross_validate_deterministic(solved_cloud):
    a = beta.cross_validate(solved_cloud, 10**5, task_stream(12, "beta", 12))
    b = beta.cross_validate(solved_cloud, 10**5, task_stream(12, "beta", 12))
    for x, y in zip(a.estimates, b.estimates):
        assert x.value == y.value and x.std_error == y.std_error


def test_se_scaling_with_budget(solved_cloud):
    e1 = beta.beta_moment(solved_cloud, 10**6, task_stream(13, "beta", 13))
    e2 = beta.beta_moment(solved_cloud, 4 * 10**6, task_stream(14, "beta", 14))
    ratio = e1.std_error / e2.std_error
    assert ratio == pytest.approx(2.0, rel=0.25)


def test_cross_validation_report_dict(solved_cloud):
    cv = beta.cross_validate(solved_cloud, 10**5, task_stream(15, "beta", 15))
    d = cv.to_dict()
    assert {e["method"] for e in d["estimates"]} == {"moment", "triple", "shift"}
    assert len(d["z_matrix"]) == 3
    assert 0.0 < cv.consensus < 1.0
