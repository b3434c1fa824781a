import numpy as np
import pytest
from hypothesis import given, strategies as st

from censalign.data import Dataset, LinkSpec, Trajectory, polyval
from censalign.ident import (DegeneratePolynomial, IdentificationError, RankError, canonical_refit, durand_kerner,
                             identify, inverse_link, poly_roots, polyfit, smallest_root)
from censalign.metrics import adjusted_rand_index, match_permutation
from censalign.synth import GeneratorSpec, generate

IDENT = LinkSpec.parse("identity")
F1 = np.array([5.0, -2.2, 0.25])


def test_inverse_link_examples():
    sig = LinkSpec.parse("sigmoid")
    assert inverse_link([0.5], sig)[0] == 0.0
    assert inverse_link([0.952574], sig)[0] == pytest.approx(3.0, abs=1e-5)
    assert inverse_link([-3.5, 7.0], IDENT).tolist() == [-3.5, 7.0]
    out = inverse_link([[0.5, np.nan]], sig)
    assert np.isnan(out[0, 1])


def test_inverse_link_domain_error_names_cell():
    with pytest.raises(IdentificationError, match=r"\(1, 0\)"):
        inverse_link([[0.5], [1.0]], LinkSpec.parse("sigmoid"), ids="p7")


def test_polyfit_examples():
    x = np.array([0.0, 1.0, 2.0])
    assert np.allclose(polyfit(x, x**2, 2), [0, 0, 1], atol=1e-10)
    pts = np.array([0.0, 1.0, 2.0, 3.0])
    assert np.allclose(polyfit(pts, [5, 3.05, 1.6, 0.65], 2), F1, atol=1e-9)
    assert np.allclose(polyfit(pts, np.full(4, 2.5), 1), [2.5, 0], atol=1e-12)


def test_polyfit_rank_errors():
    with pytest.raises(RankError):
        polyfit([1.0, 1.0, 2.0], [1, 2, 3], 2)
    with pytest.raises(RankError, match="condition"):
        polyfit(np.array([1e6, 1e6 + 1e-3, 1e6 + 2e-3, 1e6 + 3e-3]), np.arange(4.0), 3)


def test_roots_examples():
    r = poly_roots(F1)
    assert np.allclose(r.real, 4.4) and np.allclose(sorted(r.imag), [-0.8, 0.8])
    assert poly_roots([-4.0, 1.0])[0] == 4.0
    assert np.allclose(poly_roots([0.0, 0.0, 1.0]), 0)
    with pytest.raises(DegeneratePolynomial):
        poly_roots([3.0, 0.0, 0.0])


def test_stable_quadratic_small_root():
    # naive formula loses the small root to cancellation
    r = np.sort(poly_roots([1.0, 1e8, 1.0]).real)
    assert r[1] == pytest.approx(-1e-8, rel=1e-12)


def test_degenerate_leading_coefficient_lowers_degree():
    r = poly_roots([-4.0, 1.0, 1e-20])
    assert len(r) == 1 and r[0] == pytest.approx(4.0)


@given(st.integers(0, 10_000), st.integers(3, 5))
def test_durand_kerner_against_eigenvalues(seed, degree):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=degree + 1)
    theta[-1] = rng.uniform(0.5, 2) * rng.choice([-1, 1])
    ours = durand_kerner(theta)
    assert np.max(np.abs(np.polyval(theta[::-1], ours))) < 1e-9 * max(1, np.abs(theta).max())
    ref = np.roots(theta[::-1])
    # match each reference root to its nearest computed root (conjugate pairs sort arbitrarily)
    dist = np.abs(ref[:, None] - ours[None, :])
    assert dist.min(axis=1).max() < 1e-6 and dist.min(axis=0).max() < 1e-6


def test_smallest_root_tiebreak():
    assert smallest_root([1 + 2j, 1 - 1j, 1 + 1j, 3]) == 1 - 1j


def test_canonical_refit_moves_root_to_origin():
    x = np.arange(4.0)
    q = polyval(F1, x)
    tilde = canonical_refit(x, q, 4.4, 2)
    assert abs(smallest_root(poly_roots(tilde)).real) < 1e-9
    assert np.allclose(canonical_refit(x, q, 0.0, 2), polyfit(x, q, 2))


def test_canonical_refit_debiases_delay():
    xs = np.array([0.0, 1.3, 2.9])
    tildes = []
    for delta in (0.0, 2.7):
        q = polyval(F1, xs + delta)
        theta = polyfit(xs, q, 2)
        xi = smallest_root(poly_roots(theta)).real
        tildes.append(canonical_refit(xs, q, xi, 2))
    assert np.allclose(tildes[0], tildes[1], atol=1e-9)


def _instance(rng, k=2, dim=2, m=3, n_per=6, zero_member=True):
    while True:
        theta = rng.normal(size=(k, dim, 3)) * [2.0, 1.0, 0.5]
        theta[..., 2] = np.where(np.abs(theta[..., 2]) < 0.2, 0.2 * np.sign(theta[..., 2] + 1e-12), theta[..., 2])
        # canonical dim-0 forms must differ between subtypes
        if k == 1 or np.abs(theta[0, 0] - theta[1, 0]).min() > 0.3:
            break
    trajs = []
    for s in range(k):
        for j in range(n_per):
            delta = 0.0 if (j == 0 and zero_member) else float(rng.uniform(0, 5))
            x = np.concatenate([[0.0], np.sort(rng.uniform(0.5, 6, m - 1))])
            vals = np.stack([polyval(theta[s, d], x + delta) for d in range(dim)], axis=1)
            trajs.append(Trajectory(f"s{s}_{j}", x, vals, np.ones_like(vals, bool), true_subtype=s,
                                    true_delta=delta))
    order = rng.permutation(len(trajs))
    return theta, Dataset(tuple(trajs[i] for i in order), dim, IDENT)


def test_exact_recovery_100_instances():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        theta, ds = _instance(rng)
        res = identify(ds, 2)
        truth = np.array([t.true_delta for t in ds])
        assert np.max(np.abs(res.deltas - truth)) < 1e-6, seed
        assert adjusted_rand_index([t.true_subtype for t in ds], res.labels) == 1.0
        _, err = match_permutation(theta, res.theta_hat)
        assert err < 1e-6
        for c in range(2):
            assert res.deltas[res.labels == c].min() == 0.0


def test_quadratic_case5_recovery():
    ds = generate(GeneratorSpec("quad5", n_patients=60, n_visits=3, noise_var=0.0, seed=4))
    # force one zero-delay member per subtype by re-zeroing the earliest-start member
    trajs = list(ds)
    for s in (0, 1):
        idx = min((i for i, t in enumerate(trajs) if t.true_subtype == s), key=lambda i: trajs[i].true_delta)
        t = trajs[idx]
        from censalign.synth import quadratic_subtypes

        f = quadratic_subtypes(5)[s]
        trajs[idx] = t.replace(values=f(t.times), true_delta=0.0)
    ds = ds.with_trajectories(trajs)
    res = identify(ds, 2)
    assert np.max(np.abs(res.deltas - [t.true_delta for t in ds])) < 1e-6
    assert adjusted_rand_index([t.true_subtype for t in ds], res.labels) == 1.0
    from censalign.synth import QUADRATIC_CASES

    truth = np.array([[QUADRATIC_CASES[5][0]], [QUADRATIC_CASES[5][1]]])
    assert match_permutation(truth, res.theta_hat)[1] < 1e-6


def test_all_zero_delays():
    theta, ds = _instance(np.random.default_rng(1), n_per=4)
    ds = ds.with_trajectories(
        t.replace(values=np.stack([polyval(theta[t.true_subtype, d], t.times) for d in range(2)], axis=1),
                  true_delta=0.0)
        for t in ds
    )
    assert np.allclose(identify(ds, 2).deltas, 0, atol=1e-12)


def test_single_cluster():
    theta, ds = _instance(np.random.default_rng(2), k=1)
    res = identify(ds, 1)
    assert np.allclose(res.deltas, res.xi.max() - res.xi)
    assert np.all(res.labels == 0)


@given(st.integers(0, 500))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    _, ds = _instance(rng)
    perm = rng.permutation(len(ds))
    a = identify(ds, 2)
    b = identify(ds.with_trajectories(ds.trajectories[i] for i in perm), 2)
    assert np.allclose(a.deltas[perm], b.deltas)
    assert adjusted_rand_index(a.labels[perm], b.labels) == 1.0


def test_without_zero_member_deltas_shift_per_subtype():
    # add 1.5 to every delay of subtype 1 by sampling later along the same curve
    theta, ds = _instance(np.random.default_rng(5))
    shifted = []
    for t in ds:
        if t.true_subtype == 1:
            vals = np.stack([polyval(theta[1, d], t.times + t.true_delta + 1.5) for d in range(2)], axis=1)
            t = t.replace(values=vals, true_delta=t.true_delta + 1.5)
        shifted.append(t)
    ds = ds.with_trajectories(shifted)
    res = identify(ds, 2)
    truth = np.array([t.true_delta for t in ds])
    for c in range(2):
        diff = truth[res.labels == c] - res.deltas[res.labels == c]
        assert np.ptp(diff) < 1e-6
    assert sorted(np.round([np.mean((truth - res.deltas)[res.labels == c]) for c in range(2)], 6)) == [0.0, 1.5]


def test_flat_subtype_flagged():
    ds = generate(GeneratorSpec("quad1", n_patients=20, n_visits=3, noise_var=0.0, seed=0))
    res = identify(ds, 2)
    flat = np.array([t.true_subtype == 1 for t in ds])
    assert np.all(np.isnan(res.xi[flat])) and np.all(res.deltas[flat] == 0)
    assert any("flat" in d for d in res.diagnostics)


def test_too_few_points_is_error():
    t = Trajectory.from_rows("a", [0.0, 1.0], [[1.0], [2.0]])
    with pytest.raises(IdentificationError, match="a:"):
        identify(Dataset((t,), 1, IDENT), 1)


def test_lenient_mode_records_problems():
    ds = generate(GeneratorSpec("sigmoid", n_patients=30, n_visits=4, noise_var=0.25, seed=0))
    with pytest.raises(IdentificationError):
        identify(ds, 2)
    res = identify(ds, 2, strict=False)
    assert res.diagnostics and res.labels.shape == (30,)
    assert np.all(res.deltas >= 0)


def test_json_shape():
    theta, ds = _instance(np.random.default_rng(3))
    obj = identify(ds, 2).to_json()
    assert set(obj) == {"theta_hat", "link", "eta", "records", "diagnostics"}
    assert set(obj["records"][0]) == {"id", "label", "delta_hat", "xi"}
