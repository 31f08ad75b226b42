import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from icos.exceptions import InvalidParameter
from icos.geometry import geodesic_distance
from icos.samplers import (
    IcosParams,
    SamplingDecision,
    Status,
    check_sampling,
    draw_pairs,
    draw_singles,
    draw_triples,
    expand_and_refine,
    icos_registration,
    icos_registration_known_scale,
    icos_registration_unknown_scale,
    icos_rotation_search,
    max_iterations,
)
from icos.synthio import gen_registration_instance, gen_rotation_instance, metrics

CONT, ABORT = SamplingDecision.CONTINUE, SamplingDecision.ABORT


def oracle_budget(x, p, ratio, n):
    """ceil(x log(1-p) / log(1-(1-ratio)^n)) at 60 digits, never below x."""
    mpmath.mp.dps = 60
    if ratio == 0:
        return x
    # probability that a subset holds an outlier, 1 - (1 - ratio)^n, without cancellation
    miss = -mpmath.expm1(n * mpmath.log1p(-mpmath.mpf(ratio)))
    v = x * mpmath.log1p(-mpmath.mpf(p)) / mpmath.log(miss)
    return max(x, int(mpmath.ceil(v)))


# --- budget formula ---------------------------------------------------------


@pytest.mark.parametrize(
    "args, expected",
    [((1, 0.99, 0.9, 1), 44), ((1, 0.99, 0.0, 1), 1), ((1, 0.99, 0.99, 2), 46050)],
)
def test_max_iterations_spot_values(args, expected):
    assert oracle_budget(*args) == expected
    assert max_iterations(*args) == expected


@given(
    st.integers(1, 10),
    st.floats(0.5, 0.999),
    st.floats(0.0, 0.99),
    st.integers(1, 4),
)
def test_max_iterations_matches_high_precision_oracle(x, p, ratio, n):
    assert max_iterations(x, p, ratio, n) == oracle_budget(x, p, ratio, n)


def test_max_iterations_monotone():
    base = max_iterations(2, 0.95, 0.8, 2)
    assert max_iterations(3, 0.95, 0.8, 2) >= base
    assert max_iterations(2, 0.99, 0.8, 2) >= base
    assert max_iterations(2, 0.95, 0.9, 2) >= base
    assert max_iterations(2, 0.95, 0.8, 3) >= base


@pytest.mark.parametrize("args", [(0, 0.9, 0.5, 1), (1, 1.0, 0.5, 1), (1, 0.9, 1.0, 1), (1, 0.9, 0.5, 0)])
def test_max_iterations_rejects_bad_input(args):
    with pytest.raises(InvalidParameter):
        max_iterations(*args)


# --- early abort ------------------------------------------------------------


@pytest.mark.parametrize(
    "itr3, count, expected",
    [
        (399, 0, CONT), (400, 0, ABORT),
        (799, 1, CONT), (800, 1, ABORT),
        (1199, 2, CONT), (1200, 2, ABORT),
        (800, 2, CONT), (5000, 3, CONT),
    ],
)
def test_check_sampling_truth_table(itr3, count, expected):
    assert check_sampling(itr3, count, 400) is expected


def test_check_sampling_matches_literal_rule():
    for m4 in (1, 7, 400):
        for itr3 in range(1, 4 * m4 + 3):
            for count in range(5):
                abort = any(itr3 >= k * m4 and count < k for k in (1, 2, 3))
                assert (check_sampling(itr3, count, m4) is ABORT) == abort


# --- parameters -------------------------------------------------------------


def test_params_defaults():
    p = IcosParams.for_rotation_search(0.01, 1000)
    assert (p.X, p.max_itr1, p.max_itr2, p.max_itr3, p.max_itr4) == (5, 40000, 400, 2000, 400)
    assert IcosParams.for_rotation_search(0.01, 100).X == 2
    assert IcosParams.for_rotation_search(0.01, 500).X == 4
    assert IcosParams.for_rotation_search(0.01, 800).X == 5
    r = IcosParams.for_registration(0.01)
    assert (r.X, r.max_itr3) == (4, 1600)
    assert IcosParams.for_registration(0.01, X=6).X == 6
    with pytest.raises(InvalidParameter):
        IcosParams.for_registration(0.01, max_restarts=0)


def test_budget_formula_option():
    p = IcosParams.for_registration(0.01, use_budget_formula=True, assumed_outlier_ratio=0.9)
    b = p.budgets(3)
    assert b["itr1"] == max_iterations(1, 0.99, 0.9, 3)
    assert b["itr3"] == max_iterations(4, 0.99, 0.9, 1)
    assert IcosParams.for_registration(0.01).budgets(3)["itr1"] == 40000


# --- sampling primitives ----------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.integers(4, 30))
def test_draws_are_legal(seed, n):
    g = np.random.default_rng(seed)
    i, j = draw_pairs(g, n, 500)
    assert np.all(i != j) and i.min() >= 0 and max(i.max(), j.max()) < n
    t = draw_triples(g, n, 500)
    assert np.all((t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2]))
    ex = tuple(g.choice(n, 3, replace=False))
    k = draw_singles(g, n, ex, 500)
    assert not set(k.tolist()) & set(int(e) for e in ex)
    assert k.min() >= 0 and k.max() < n


def test_draw_singles_uniform_over_allowed():
    g = np.random.default_rng(0)
    k = draw_singles(g, 6, (1, 4), 40_000)
    counts = np.bincount(k, minlength=6)
    assert counts[1] == counts[4] == 0
    assert np.all(np.abs(counts[[0, 2, 3, 5]] / 40_000 - 0.25) < 0.01)


# --- zero-noise recovery ----------------------------------------------------


def test_rotation_search_noiseless():
    cset, truth = gen_rotation_instance(100, 0.0, 0.0, seed=3)
    rep = icos_rotation_search(cset, IcosParams.for_rotation_search(0.0, 100))
    assert rep.converged
    assert geodesic_distance(rep.rotation, truth.rotation) < 1e-9
    assert rep.inliers.tolist() == list(range(100))


def test_known_scale_identity_noiseless():
    cset, _ = gen_registration_instance(60, 0.0, 0.0, seed=1)
    same = type(cset)(cset.src, cset.src, cset.kind)
    rep = icos_registration_known_scale(same, IcosParams.for_registration(0.0))
    assert geodesic_distance(rep.rotation, np.eye(3)) < 1e-9
    assert np.linalg.norm(rep.translation) < 1e-9
    assert rep.inliers.tolist() == list(range(60))


def test_unknown_scale_noiseless():
    cset, truth = gen_registration_instance(200, 0.0, 0.0, scale_range=3.0, seed=2)
    rep = icos_registration_unknown_scale(cset, IcosParams.for_registration(0.0))
    assert abs(rep.scale - 3.0) < 1e-9
    assert geodesic_distance(rep.rotation, truth.rotation) < 1e-9
    assert np.linalg.norm(rep.translation - truth.transform.translation) < 1e-9


# --- contracts of the solvers -----------------------------------------------


def _solve(problem, ratio, seed, n=1000, trace=None):
    if problem == "rotation":
        cset, truth = gen_rotation_instance(n, 0.01, ratio, seed)
        return icos_rotation_search(cset, IcosParams.for_rotation_search(0.01, n, seed=seed), trace), cset, truth
    scale = None if problem == "known-scale" else (1.0, 5.0)
    cset, truth = gen_registration_instance(n, 0.01, ratio, scale, seed)
    params = IcosParams.for_registration(0.01, seed=seed)
    return icos_registration(cset, params, problem == "known-scale", trace), cset, truth


@pytest.mark.parametrize("problem", ["rotation", "known-scale", "unknown-scale"])
def test_determinism(problem):
    a, _, _ = _solve(problem, 0.9, 7)
    b, _, _ = _solve(problem, 0.9, 7)
    np.testing.assert_array_equal(a.rotation, b.rotation)
    np.testing.assert_array_equal(a.translation, b.translation)
    assert a.scale == b.scale
    np.testing.assert_array_equal(a.inliers, b.inliers)
    assert a.iterations == b.iterations and a.restarts == b.restarts and a.collected == b.collected


@pytest.mark.parametrize("problem", ["rotation", "known-scale", "unknown-scale"])
def test_status_and_structure_contracts(problem):
    trace = []
    rep, cset, _ = _solve(problem, 0.8, 11, trace=trace)
    x = 5 if problem == "rotation" else 4
    assert rep.status is Status.CONVERGED
    assert len(rep.collected) == x and len(set(rep.collected)) == x
    assert not set(rep.collected) & set(rep.seed_structure)
    assert len(rep.inliers) >= x + len(rep.seed_structure)
    assert len(set(rep.inliers.tolist())) == len(rep.inliers)
    assert rep.inliers.min() >= 0 and rep.inliers.max() < len(cset)
    for kind, idx in trace:
        assert len(set(idx)) == len(idx)


def test_budget_exhaustion_reports_identity():
    g = np.random.default_rng(0)
    from icos.geometry import CorrespondenceSet

    u = g.standard_normal((40, 3))
    cset = CorrespondenceSet.vectors(u, g.standard_normal((40, 3)))
    params = IcosParams.for_rotation_search(1e-6, 40, max_restarts=3, max_itr1=50)
    rep = icos_rotation_search(cset, params)
    assert rep.status is Status.BUDGET_EXHAUSTED
    assert np.array_equal(rep.rotation, np.eye(3)) and len(rep.inliers) == 0
    assert rep.restarts == 2 and rep.rejections


def test_registration_exhaustion_with_partial_structure():
    cset, _ = gen_registration_instance(40, 0.01, 0.85, None, seed=4)
    params = IcosParams.for_registration(0.01, max_restarts=5, X=30)
    rep = icos_registration(cset, params, known_scale=True)
    assert rep.status is Status.BUDGET_EXHAUSTED
    assert not rep.converged


def test_wrong_input_kind_rejected():
    cset, _ = gen_rotation_instance(20, 0.01, 0.0, seed=0)
    with pytest.raises(InvalidParameter):
        icos_registration(cset, IcosParams.for_registration(0.01))
    pts, _ = gen_registration_instance(5, 0.01, 0.0, seed=0)
    with pytest.raises(InvalidParameter):
        icos_registration(pts, IcosParams.for_registration(0.01))


# --- expansion --------------------------------------------------------------


def test_expansion_from_truth():
    for seed in range(5):
        cset, truth = gen_rotation_instance(1000, 0.01, 0.5, seed)
        est, inl = expand_and_refine(cset, truth.rotation, 0.01)
        found = set(inl.tolist())
        true = set(truth.inliers.tolist())
        assert len(found & true) / len(true) >= 0.999
        assert len(found & true) / len(found) >= 0.99


def test_expansion_zero_noise_is_exact():
    cset, truth = gen_registration_instance(300, 0.0, 0.6, (1.0, 5.0), seed=9)
    _, inl = expand_and_refine(cset, truth.transform, 0.0)
    np.testing.assert_array_equal(inl, truth.inliers)


def test_refinement_nearly_idempotent():
    changed = total = 0
    for problem in ("rotation", "known-scale", "unknown-scale"):
        for seed in range(30):
            rep, cset, _ = _solve(problem, 0.9, seed)
            _, again = expand_and_refine(cset, rep.estimate, 0.01, 1.0 if problem == "known-scale" else None)
            changed += set(again.tolist()) != set(rep.inliers.tolist())
            total += 1
    assert changed / total < 0.01


_PURITY_SHORT = {("rotation", 0.95), ("known-scale", 0.95)}


@pytest.mark.parametrize("problem", ["rotation", "known-scale", "unknown-scale"])
@pytest.mark.parametrize("ratio", [0.5, 0.9, 0.95])
def test_collected_structures_are_pure(problem, ratio, request):
    if (problem, ratio) in _PURITY_SHORT:
        request.applymarker(pytest.mark.xfail(strict=True, reason="pure in 45-47 of 50 runs at 95% outliers"))
    pure = 0
    for seed in range(50):
        rep, _, truth = _solve(problem, ratio, seed)
        pure += bool(np.all(truth.inlier_mask[list(rep.seed_structure + rep.collected)]))
    assert pure / 50 >= 0.98


@pytest.mark.parametrize("ratio", [round(0.1 * k, 1) for k in range(9)])
def test_small_problem_recall(ratio):
    good = 0
    for seed in range(50):
        rep, _, truth = _solve("rotation", ratio, seed, n=100)
        good += metrics(rep, truth)["recall"] >= 0.99
    assert good >= 49


def test_known_scale_half_outliers_is_fast():
    for seed in range(5):
        rep, _, _ = _solve("known-scale", 0.5, seed)
        assert rep.elapsed < 1.0
