import numpy as np
import pytest
from scipy.special import logsumexp

from gwharmonic import network as net
from gwharmonic import offspring as off
from gwharmonic import trees as tr
from gwharmonic.rngs import task_stream

from test_trees import build, path_tree


def as_reduced(tree, n):
    r = tr.reduce(tree, n)
    assert isinstance(r, tr.ReducedTree)
    return r


def star(k):
    return as_reduced(build([-1] + [0] * k), 1)


def random_reduced(rng, n=None, dist=None):
    dist = dist or off.geometric()
    n = n or int(rng.integers(2, 13))
    reds, _, _ = tr.sample_conditioned_batch(dist, n, 1, rng, reduce_at_n=True)
    return reds[0]


# ---------------------------------------------------------------------------
# conductances
# ---------------------------------------------------------------------------


def test_conductance_path_series():
    for i in (1, 2, 5, 17):
        r = as_reduced(path_tree(i), i)
        c = net.subtree_conductances(r)
        assert c[0] == pytest.approx(1.0 / i, abs=1e-14)
        assert np.isinf(c[r.boundary[0]])
        assert net.conductance_to_level(r) == pytest.approx(1.0 / (i + 1), abs=1e-14)


def test_conductance_depth1_star():
    r = star(2)
    assert net.subtree_conductances(r)[0] == pytest.approx(2.0)
    assert net.conductance_to_level(r) == pytest.approx(2.0 / 3.0)


def test_conductance_two_branches_hand_reduction():
    # root with two branches, each a 3-edge path: branch conductance 1/3,
    # so c(root) = 2/3 (each child subtree is a 2-edge path with c = 1/2)
    t = build([-1, 0, 0, 1, 2, 3, 4])
    r = as_reduced(t, 3)
    c = net.subtree_conductances(r)
    assert c[1] == pytest.approx(0.5)
    assert c[0] == pytest.approx(2.0 / 3.0)


def test_conductance_lower_bound_and_cutset():
    rng = task_stream(20, "network", 0)
    for _ in range(50):
        r = random_reduced(rng)
        cl = net.conductance_to_level(r)
        net.check_conductance_invariants(r, cl)
        assert 1.0 / (r.n + 1) - 1e-12 <= cl <= 1.0


# ---------------------------------------------------------------------------
# harmonic measure: exact splitting vs oracles
# ---------------------------------------------------------------------------


def test_measure_star_uniform():
    for k in (2, 3, 7):
        mu = net.harmonic_measure_exact(star(k))
        assert np.allclose(mu.boundary_log_mass, -np.log(k), atol=1e-14)


def test_measure_path_point_mass():
    mu = net.harmonic_measure_exact(as_reduced(path_tree(6), 6))
    assert mu.boundary_log_mass.shape == (1,)
    assert mu.boundary_log_mass[0] == pytest.approx(0.0, abs=1e-14)


def test_measure_normalised_and_negative():
    rng = task_stream(21, "network", 1)
    for _ in range(40):
        mu = net.harmonic_measure_exact(random_reduced(rng))
        assert abs(logsumexp(mu.boundary_log_mass)) < 1e-12
        assert np.all(mu.boundary_log_mass <= 1e-15)


def test_flow_conservation():
    rng = task_stream(22, "network", 2)
    for _ in range(20):
        r = random_reduced(rng)
        mu = net.harmonic_measure_exact(r)
        t = r.tree
        for g in range(r.n):
            lo, hi = t.gen_offsets[g], t.gen_offsets[g + 1]
            clo, chi = t.gen_offsets[g + 1], t.gen_offsets[g + 2]
            child_flow = np.bincount(
                (t.parent[clo:chi] - lo).astype(np.int64),
                weights=np.exp(mu.log_flow[clo:chi]),
                minlength=int(hi - lo),
            )
            assert np.allclose(
                np.log(child_flow), mu.log_flow[lo:hi], atol=1e-12, rtol=0
            )


def test_splitting_agrees_with_linsolve():
    rng = task_stream(23, "network", 3)
    for _ in range(200):
        r = random_reduced(rng)
        a = net.harmonic_measure_exact(r).boundary_log_mass
        b = net.hitting_distribution_linsolve(r).boundary_log_mass
        assert np.max(np.abs(np.exp(a) - np.exp(b))) < 1e-10


def test_linsolve_star_and_path():
    mu = net.hitting_distribution_linsolve(star(4))
    assert np.allclose(np.exp(mu.boundary_log_mass), 0.25, atol=1e-12)
    mu = net.hitting_distribution_linsolve(as_reduced(path_tree(5), 5))
    assert np.exp(mu.boundary_log_mass[0]) == pytest.approx(1.0, abs=1e-12)


def test_linsolve_size_cap():
    r = as_reduced(path_tree(3), 3)
    big = tr.ReducedTree(tree=r.tree, n=3, boundary=r.boundary)
    big.tree.parent = np.zeros(30_000, np.int64)  # fake size only for the guard
    with pytest.raises(ValueError):
        net.hitting_distribution_linsolve(big)


def test_walk_exit_path_deterministic():
    rng = task_stream(24, "network", 4)
    r = as_reduced(path_tree(4), 4)
    exits = net.simulate_walk_exits(r, 100, rng)
    assert np.all(exits == r.boundary[0])


def test_walk_exit_star_symmetric():
    rng = task_stream(25, "network", 5)
    r = star(4)
    exits = net.simulate_walk_exits(r, 10**5, rng)
    freqs = np.bincount(exits - r.boundary[0], minlength=4) / 10**5
    assert np.all(np.abs(freqs - 0.25) < 0.005)


def test_walk_frequencies_match_exact_measure():
    rng = task_stream(26, "network", 6)
    r = random_reduced(rng, n=8)
    mu = net.harmonic_measure_exact(r)
    p = np.exp(mu.boundary_log_mass)
    walks = 10**5
    exits = net.simulate_walk_exits(r, walks, rng)
    counts = np.bincount(exits - r.boundary[0], minlength=p.size)
    sigma = np.sqrt(walks * p * (1 - p))
    z = (counts - walks * p) / np.maximum(sigma, 1e-9)
    assert np.max(np.abs(z)) < 3.5
    chi2 = float(np.sum(z * z))
    k = p.size
    assert abs(chi2 - k) / np.sqrt(2 * k) < 3.5


def test_sample_boundary_matches_measure():
    rng = task_stream(27, "network", 7)
    r = random_reduced(rng, n=6)
    mu = net.harmonic_measure_exact(r)
    p = np.exp(mu.boundary_log_mass)
    draws = net.sample_boundary(mu, rng, size=10**5)
    counts = np.bincount(draws, minlength=p.size)
    sigma = np.sqrt(10**5 * p * (1 - p))
    assert np.max(np.abs(counts - 10**5 * p) / np.maximum(sigma, 1e-9)) < 4.0


# ---------------------------------------------------------------------------
# ball mass / concentration / per-sample statistics
# ---------------------------------------------------------------------------


def test_ball_mass_examples():
    rng = task_stream(28, "network", 8)
    r = star(5)
    mu = net.harmonic_measure_exact(r)
    v = int(r.boundary[2])
    assert net.ball_mass(mu, r, v, 0) == pytest.approx(np.log(1 / 5))
    assert net.ball_mass(mu, r, v, 1) == 0.0
    r = random_reduced(rng, n=9)
    mu = net.harmonic_measure_exact(r)
    v = int(r.boundary[rng.integers(r.boundary.size)])
    masses = [net.ball_mass(mu, r, v, k) for k in range(10)]
    assert masses[9] == 0.0
    assert np.all(np.diff(masses) >= -1e-12)  # nondecreasing in radius


def test_ball_mass_partitions_at_every_radius():
    rng = task_stream(29, "network", 9)
    r = random_reduced(rng, n=7)
    mu = net.harmonic_measure_exact(r)
    t = r.tree
    for rad in range(8):
        anc = tr.level_set(t, 7 - rad)
        assert np.exp(mu.log_flow[anc]).sum() == pytest.approx(1.0, abs=1e-12)


def test_concentration_statistic_limits():
    rng = task_stream(30, "network", 10)
    r = random_reduced(rng, n=8)
    mu = net.harmonic_measure_exact(r)
    assert net.concentration_statistic(mu, 8, 0.78, 50.0) == pytest.approx(1.0, abs=1e-12)
    # delta=0 with generic masses: the window {mass = n^-beta exactly} is empty
    assert net.concentration_statistic(mu, 8, 0.7812345, 0.0) == 0.0
    mid = net.concentration_statistic(mu, 8, 0.78, 0.5)
    assert 0.0 <= mid <= 1.0


def test_exit_exponent_point_mass_is_zero():
    mu = net.harmonic_measure_exact(as_reduced(path_tree(9), 9))
    assert -mu.boundary_log_mass[0] / np.log(9) == 0.0


def test_exit_exponent_rejects_small_n():
    rng = task_stream(31, "network", 11)
    with pytest.raises(ValueError):
        net.exit_exponent_sample(off.geometric(), 1, rng)


def test_exit_exponent_mean_range_n200():
    rng = task_stream(32, "network", 12)
    dist = off.geometric()
    vals = [net.exit_exponent_sample(dist, 200, rng) for _ in range(400)]
    assert 0.6 <= np.mean(vals) <= 0.95


def test_scaled_conductance_path_and_bounds():
    r = as_reduced(path_tree(12), 12)
    c = net.conductance_to_level(r)
    assert 12 * c == pytest.approx(12.0 / 13.0, abs=1e-12)
    rng = task_stream(33, "network", 13)
    for n in (5, 30):
        v = net.scaled_conductance_sample(off.geometric(), n, rng)
        assert v >= n / (n + 1) - 1e-12


def test_scaled_conductance_second_moment_bounded():
    rng = task_stream(34, "network", 14)
    dist = off.geometric()
    moments = {}
    for n in (50, 100, 200):
        reds, _, _ = tr.sample_conditioned_batch(dist, n, 800, rng, reduce_at_n=True)
        vals = np.array([n * net.conductance_to_level(r) for r in reds])
        moments[n] = float(np.mean(vals**2))
    # Lemma-style bound: second moments stay bounded (no growth with n)
    assert all(1.0 <= m <= 12.0 for m in moments.values())
    assert max(moments.values()) / min(moments.values()) < 1.6
