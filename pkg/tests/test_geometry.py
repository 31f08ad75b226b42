import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from icos.exceptions import DegenerateConfiguration, DivisionByZero, EmptyInput, InvalidParameter
from icos.geometry import (
    CorrespondenceSet,
    SimilarityTransform,
    geodesic_distance,
    horn_pair_rotation,
    horn_triple_rotation,
    is_rotation,
    kabsch_rotation,
    matrix_to_quaternion,
    quaternion_to_matrix,
    random_rotation,
    recover_translation,
    rotation_about_axis,
    solve_rotation_nonminimal,
    solve_transform_nonminimal,
    weighted_scale,
)

from conftest import unit_vectors

seeds = st.integers(0, 2**32 - 1)


def quat_angle(a, b):
    """Rotation angle between two matrices via scipy quaternions (independent of the package)."""
    return (Rotation.from_matrix(a).inv() * Rotation.from_matrix(b)).magnitude()


# --- rotations and geodesic distance ---------------------------------------


@given(seeds)
def test_random_rotation_is_valid(seed):
    assert is_rotation(random_rotation(np.random.default_rng(seed)))


def test_quaternion_conversions_match_scipy(rng):
    for _ in range(200):
        r = random_rotation(rng)
        x, y, z, w = Rotation.from_matrix(r).as_quat()
        ref = np.array([w, x, y, z]) * np.sign(w)
        np.testing.assert_allclose(matrix_to_quaternion(r), ref, atol=1e-12)
        np.testing.assert_allclose(quaternion_to_matrix(ref), r, atol=1e-12)


def test_geodesic_matches_quaternion_oracle(rng):
    for _ in range(500):
        a, b = random_rotation(rng), random_rotation(rng)
        assert geodesic_distance(a, b) == pytest.approx(quat_angle(a, b), abs=1e-9)


@pytest.mark.parametrize("angle", [0.0, 1e-8, 1e-4, np.radians(1.0), 1.0, np.pi - 1e-6, np.pi])
def test_geodesic_of_axis_rotation_is_its_angle(angle):
    r = rotation_about_axis([0.3, -1.0, 2.0], angle)
    assert geodesic_distance(np.eye(3), r) == pytest.approx(angle, abs=1e-12)


def test_geodesic_metric_axioms(rng):
    for _ in range(1000):
        a, b, c = (random_rotation(rng) for _ in range(3))
        assert geodesic_distance(a, a) == pytest.approx(0.0, abs=1e-12)
        assert geodesic_distance(a, b) == geodesic_distance(b, a) or np.isclose(
            geodesic_distance(a, b), geodesic_distance(b, a), atol=1e-12
        )
        assert 0.0 <= geodesic_distance(a, b) <= np.pi
        assert geodesic_distance(a, c) <= geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9


# --- SVD rotation -----------------------------------------------------------


def test_kabsch_recovers_noiseless_rotation(rng):
    src = rng.standard_normal((20, 3))
    r = random_rotation(rng)
    assert geodesic_distance(kabsch_rotation(src, src @ r.T), r) < 1e-12


def test_kabsch_left_equivariance(rng):
    for _ in range(100):
        src = rng.standard_normal((10, 3))
        dst = src @ random_rotation(rng).T + 0.1 * rng.standard_normal((10, 3))
        s = random_rotation(rng)
        assert geodesic_distance(kabsch_rotation(src, dst @ s.T), s @ kabsch_rotation(src, dst)) < 1e-9


def test_kabsch_corrects_reflections(rng):
    src = rng.standard_normal((12, 3))
    r = kabsch_rotation(src, -src)  # best orthogonal fit is the point reflection
    assert is_rotation(r)


def test_kabsch_rejects_parallel_vectors():
    src = np.array([[1.0, 0, 0], [2.0, 0, 0], [-3.0, 0, 0]])
    with pytest.raises(DegenerateConfiguration):
        kabsch_rotation(src, src)


# --- minimal solvers --------------------------------------------------------


def test_horn_pair_rotation_exact_on_noiseless(rng):
    for _ in range(200):
        r = random_rotation(rng)
        u = rng.standard_normal((2, 3)) * rng.uniform(0.1, 10, (2, 1))
        est = horn_pair_rotation(u[0], r @ u[0], u[1], r @ u[1])
        assert is_rotation(est)
        assert geodesic_distance(est, r) < 1e-9


def test_horn_pair_rotation_parallel_is_degenerate():
    u = np.array([1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfiguration):
        horn_pair_rotation(u, u, 2 * u, 2 * u)


def test_horn_triple_rotation_scale_invariant(rng):
    for _ in range(200):
        p = rng.standard_normal((3, 3))
        q = p @ random_rotation(rng).T + 0.05 * rng.standard_normal((3, 3))
        c = rng.uniform(0.01, 100)
        assert geodesic_distance(horn_triple_rotation(p, c * q), horn_triple_rotation(p, q)) < 1e-9


def test_horn_triple_rotation_collinear_is_degenerate():
    p = np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]])
    with pytest.raises(DegenerateConfiguration):
        horn_triple_rotation(p, p)


# --- scale and translation --------------------------------------------------


def test_weighted_scale_uniform_ratio(rng):
    m = rng.standard_normal((7, 3))
    assert weighted_scale(m, 3 * m) == pytest.approx(3.0, rel=1e-15)


def test_weighted_scale_mixed_ratios():
    # (1^2 * 2 + 2^2 * 1) / (1^2 + 2^2)
    assert weighted_scale([[1, 0, 0], [0, 2, 0]], [[2, 0, 0], [0, 2, 0]]) == pytest.approx(1.2, rel=1e-15)


@given(seeds, st.floats(1e-3, 1e3))
def test_weighted_scale_homogeneous(seed, c):
    g = np.random.default_rng(seed)
    m, n = g.standard_normal((5, 3)), g.standard_normal((5, 3))
    assert weighted_scale(m, c * n) == pytest.approx(c * weighted_scale(m, n), rel=1e-12)


def test_weighted_scale_errors():
    with pytest.raises(DivisionByZero):
        weighted_scale([[0, 0, 0], [1, 0, 0]], [[1, 0, 0], [1, 0, 0]])
    with pytest.raises(EmptyInput):
        weighted_scale(np.empty((0, 3)), np.empty((0, 3)))


def test_recover_translation_examples(rng):
    np.testing.assert_array_equal(recover_translation(1.0, np.eye(3), [1, 1, 1], [2, 3, 4]), [1, 2, 3])
    np.testing.assert_array_equal(recover_translation(2.0, np.eye(3), [1, 0, 0], [2, 0, 0]), [0, 0, 0])
    s, r, t = 2.5, random_rotation(rng), rng.standard_normal(3)
    p = rng.standard_normal((30, 3))
    q = s * p @ r.T + t
    np.testing.assert_allclose(recover_translation(s, r, p.mean(0), q.mean(0)), t, atol=1e-12)


# --- non-minimal solvers ----------------------------------------------------


def test_solve_transform_identity(rng):
    p = rng.uniform(-0.5, 0.5, (50, 3))
    tf = solve_transform_nonminimal(CorrespondenceSet.points(p, p), range(50))
    assert tf.scale == pytest.approx(1.0, abs=1e-12)
    assert geodesic_distance(tf.rotation, np.eye(3)) < 1e-12
    np.testing.assert_allclose(tf.translation, 0, atol=1e-12)


@given(seeds, st.floats(0.1, 10.0))
def test_solve_transform_round_trip(seed, s):
    g = np.random.default_rng(seed)
    truth = SimilarityTransform(s, random_rotation(g), g.uniform(-3, 3, 3))
    p = g.uniform(-0.5, 0.5, (40, 3))
    cset = CorrespondenceSet.points(p, truth.apply(p))
    tf = solve_transform_nonminimal(cset, range(40))
    assert abs(tf.scale - s) < 1e-9
    assert geodesic_distance(tf.rotation, truth.rotation) < 1e-9
    np.testing.assert_allclose(tf.translation, truth.translation, atol=1e-9)


def test_known_scale_path_matches_unknown_on_unit_scale(rng):
    truth = SimilarityTransform(1.0, random_rotation(rng), rng.standard_normal(3))
    p = rng.uniform(-0.5, 0.5, (25, 3))
    cset = CorrespondenceSet.points(p, truth.apply(p))
    a = solve_transform_nonminimal(cset, range(25))
    b = solve_transform_nonminimal(cset, range(25), known_scale=1.0)
    assert geodesic_distance(a.rotation, b.rotation) < 1e-12
    np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)


def test_solve_rotation_uses_raw_vectors(rng):
    r = random_rotation(rng)
    u = unit_vectors(rng, 10) * rng.uniform(0.5, 2.0, (10, 1))
    cset = CorrespondenceSet.vectors(u, u @ r.T)
    assert geodesic_distance(solve_rotation_nonminimal(cset, range(10)), r) < 1e-12
    with pytest.raises(DegenerateConfiguration):
        solve_rotation_nonminimal(cset, [0])


# --- correspondence containers ---------------------------------------------


def test_correspondence_set_validation():
    with pytest.raises(InvalidParameter):
        CorrespondenceSet.points(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(InvalidParameter):
        CorrespondenceSet.points([[np.nan, 0, 0]], [[0, 0, 0]])
    with pytest.raises(InvalidParameter):
        CorrespondenceSet.vectors([[0, 0, 0], [1, 0, 0]], [[1, 0, 0], [1, 0, 0]])
    # zero points are fine for registration
    cset = CorrespondenceSet.points([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [1, 0, 0]])
    assert len(cset) == 2 and cset[1].index == 1
    with pytest.raises(ValueError):
        cset.src[0, 0] = 5.0
    assert [c.index for c in cset] == [0, 1]


def test_similarity_transform_requires_positive_scale():
    with pytest.raises(InvalidParameter):
        SimilarityTransform(0.0, np.eye(3))
    m = SimilarityTransform(2.0, np.eye(3), [1, 2, 3]).as_matrix()
    np.testing.assert_array_equal(m[:3, 3], [1, 2, 3])
    assert m[0, 0] == 2.0
