"""
Tests for minimum distances, distance enumerators and bounds
Run with: pytest tests/test_distance.py
"""

from fractions import Fraction
import math

import numpy as np
import pytest

from scdma.constellation import DIFF_VALUES, ZERO_DIFF_INDEX
from scdma.design import tree_code
from scdma.distance import (
    DifferenceSpace,
    concatenation_lower_bound,
    direct_enumerator,
    distance_enumerator,
    f_distance,
    lower_bound_regular,
    min_distance,
    q_function,
    two_user_min_distance,
    union_bound,
    upper_bound_spreading,
)
from scdma.errors import EnumerationLimitError, InvalidInputError
from scdma.presets import PRESETS, SINGLE_RESOURCE, get_preset
from scdma.signature import HALF_PI, SignatureMatrix, concatenate, from_rows
from tests.matrices import random_matrix, random_tree_code

PI = math.pi
SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
DELTA3 = SINGLE_RESOURCE[3][1]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_published_minimum_distances(name):
    """Every shipped design reproduces its published minimum distance"""
    preset = get_preset(name)
    result = min_distance(preset.matrix)
    assert abs(result.d_min - preset.d_min) <= preset.d_min_tol
    assert abs(f_distance(preset.matrix, result.argmin_u) - result.d_min) < 1e-12


def test_preset_tolerances_are_tight():
    """No shipped design is allowed to drift more than 1e-4 from its published distance"""
    assert all(preset.d_min_tol <= 1e-4 for preset in PRESETS.values())


@pytest.mark.parametrize("name, expected", [("single3", 0.430976), ("single6", 0.059420)])
def test_polished_single_resource_phases(name, expected):
    """Stored phases sit on the polished optimum, within rounding of the printed table"""
    assert min_distance(get_preset(name).matrix).d_min == pytest.approx(expected, abs=2e-6)


def test_two_user_optimum():
    """[1, e^{i pi/6}] reaches sqrt(3) - 1, [1, e^{i pi/4}] only 2 - sqrt(2)"""
    assert abs(min_distance(from_rows([[0.0, "pi/6"]])).d_min - (SQRT3 - 1)) < 1e-12
    assert abs(min_distance(from_rows([[0.0, "pi/4"]])).d_min - (2 - SQRT2)) < 1e-12


@pytest.mark.parametrize("theta", [0.0, 0.1, PI / 12, PI / 6, PI / 5, PI / 4])
def test_two_user_closed_form(theta):
    """Closed form over [0, pi/4] agrees with the search"""
    exhaustive = min_distance(from_rows([[0.0, theta]])).d_min
    assert abs(exhaustive - two_user_min_distance(theta)) < 1e-12


def test_two_user_enumerator():
    """Exact distance spectrum of the optimal two-user vector"""
    enumerator = distance_enumerator(from_rows([[0.0, "pi/6"]]))
    expected = [
        (SQRT3 - 1, Fraction(2)),
        (math.sqrt(6) - SQRT2, Fraction(1, 4)),
        (SQRT2, Fraction(5)),
        (2.0, Fraction(9, 4)),
        (math.sqrt(8 - 2 * SQRT3), Fraction(1)),
        (math.sqrt(6), Fraction(1)),
        (SQRT3 + 1, Fraction(2)),
        (math.sqrt(8 + 2 * SQRT3), Fraction(1)),
        (2 * SQRT3, Fraction(1, 4)),
        (2 * math.sqrt(2 + SQRT3), Fraction(1, 4)),
    ]
    assert len(enumerator) == len(expected)
    for (d, a), (d_exp, a_exp) in zip(enumerator.terms, expected):
        assert abs(d - d_exp) < 1e-9
        assert a == a_exp
    assert enumerator.total() == 15
    assert enumerator.a_zero() == 0
    assert enumerator.d_min() == pytest.approx(SQRT3 - 1, abs=1e-12)


def test_degenerate_enumerator_has_zero_distance():
    """Two identical columns give A(0) = 5/4 and a union bound that never drops below it"""
    m = from_rows([[0.0, 0.0]])
    enumerator = distance_enumerator(m)
    assert enumerator.a_zero() == Fraction(5, 4)
    assert min_distance(m).d_min == pytest.approx(0.0, abs=1e-12)
    for n0 in (1.0, 1e-2, 1e-6):
        assert union_bound(enumerator, n0) >= 1.25


def test_enumerator_total_counts_every_pair():
    """sum_d A(d) = 4^K - 1 for any matrix"""
    rng = np.random.default_rng(5)
    for n_users in range(1, 5):
        m = random_matrix(rng, 2, n_users)
        assert distance_enumerator(m).total() == 4 ** n_users - 1


def test_enumerator_matches_definition():
    """Difference-vector enumerator equals the pairwise definition on random codes"""
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n_users = int(rng.integers(1, 4))
        n_rows = int(rng.integers(1, 4))
        m = random_matrix(rng, n_rows, n_users)
        fast = distance_enumerator(m)
        slow = direct_enumerator(m)
        assert fast.matches(slow)
        assert abs(fast.d_min() - min_distance(m).d_min) < 1e-9


def test_direct_enumerator_cap():
    """The pairwise oracle refuses more than three users by default"""
    with pytest.raises(EnumerationLimitError):
        direct_enumerator(get_preset("single4").matrix)


def test_enumeration_cap():
    """Nine users exceed the default cap"""
    m = from_rows([[0.0] * 9])
    with pytest.raises(EnumerationLimitError):
        min_distance(m)
    with pytest.raises(EnumerationLimitError):
        distance_enumerator(m)


@pytest.mark.parametrize("n_users", [2, 3])
def test_orbit_representatives_cover_each_vector_once(n_users):
    """Rotating the representatives by powers of i visits every nonzero vector once"""
    space = DifferenceSpace(n_users, chunk_size=7)
    seen = set()
    for b in range(space.n_blocks):
        for vector in space.block(b).vectors:
            for power in range(4):
                rotated = vector * 1j ** power
                digits = tuple(int(np.argmin(np.abs(DIFF_VALUES - v))) for v in rotated)
                assert digits not in seen
                seen.add(digits)
    assert len(seen) == 9 ** n_users - 1
    assert (ZERO_DIFF_INDEX,) * n_users not in seen


def test_blocked_search_matches_single_block():
    """Splitting into blocks and threads does not change the minimum"""
    rng = np.random.default_rng(8)
    batch = np.stack([random_matrix(rng, 2, 3, density=1.0).values for _ in range(5)])
    whole = DifferenceSpace(3).min_sq_distances(batch, threads=1)
    split = DifferenceSpace(3, chunk_size=7).min_sq_distances(batch, threads=3)
    assert np.allclose(whole, split, rtol=0, atol=1e-12)


def test_f_distance_symmetry():
    """F(S, u) = F(S, -u) and length mismatches are rejected"""
    m = get_preset("opt4x6").matrix
    rng = np.random.default_rng(1)
    u = DIFF_VALUES[rng.integers(0, 9, 6)]
    assert f_distance(m, u) == pytest.approx(f_distance(m, -u))
    with pytest.raises(InvalidInputError):
        f_distance(m, u[:3])


def test_row_rotation_invariance():
    """Rotating rows by arbitrary angles keeps the spectrum"""
    rng = np.random.default_rng(17)
    for _ in range(100):
        m = random_matrix(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        rotated = m.row_rotate(rng.uniform(0, 2 * PI, m.n_rows))
        assert distance_enumerator(m).matches(distance_enumerator(rotated))


def test_column_rotation_invariance():
    """Rotating columns by quarter turns keeps the spectrum"""
    rng = np.random.default_rng(18)
    for _ in range(100):
        m = random_matrix(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        rotated = m.column_rotate(rng.integers(-3, 4, m.n_cols))
        assert distance_enumerator(m).matches(distance_enumerator(rotated))


def assert_canonical_structure(m, phi):
    """Tree edges of a column share one phase in [0, pi/2); column 0 carries phase 0"""
    for k in range(m.n_cols):
        phases = np.array([m.theta[n, k] for n in m.graph.data_neighbors(k) if (n, k) not in phi])
        assert phases.size >= 1
        assert np.allclose(phases, phases[0], atol=1e-9)
        assert 0.0 <= phases[0] < HALF_PI
    assert np.allclose(m.theta[m.support[:, 0], 0], 0.0, atol=1e-12)


def test_canonical_form_invariance_randomized():
    """Canonicalizing random labelings keeps the spectrum and yields the canonical structure"""
    rng = np.random.default_rng(19)
    shapes = [get_preset("opt4x6").matrix, get_preset("c1_4x6").matrix]
    for trial in range(100):
        kind = trial % 4
        if kind == 0:
            m = random_tree_code(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5)))
            assert m.graph.is_tree()
        elif kind == 1:
            m = random_matrix(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)), connected=True)
        else:
            base = shapes[kind - 2]
            m = SignatureMatrix(rng.uniform(0, 2 * PI, base.shape), base.support)
        phi = m.graph.spanning_tree_complement()
        canonical = m.canonicalize(phi)
        assert canonical.graph == m.graph
        assert_canonical_structure(canonical, phi)
        assert distance_enumerator(m).matches(distance_enumerator(canonical))


def test_canonical_form_on_banded_graph():
    """Random labelings of the banded 8-user graph keep their d_min when canonicalized"""
    rng = np.random.default_rng(23)
    banded = get_preset("c2_4x8").matrix
    for _ in range(2):
        m = SignatureMatrix(rng.uniform(0, 2 * PI, banded.shape), banded.support)
        canonical = m.canonicalize()
        assert_canonical_structure(canonical, banded.graph.spanning_tree_complement())
        assert abs(min_distance(m).d_min - min_distance(canonical).d_min) < 1e-9


@pytest.mark.parametrize("n_users", [2, 3, 4, 5, 6])
def test_tree_code_canonical_form(n_users):
    """Rotated copies of the tree code fold back to columns alternating 0 and pi/6"""
    rng = np.random.default_rng(n_users)
    code = tree_code(n_users)
    assert code.canonicalize().allclose(code)
    columns, loops = code.canonical_parameters()
    assert loops.size == 0
    assert np.allclose(columns, [PI / 6 if k % 2 else 0.0 for k in range(1, n_users)])
    for _ in range(10):
        moved = code.row_rotate(rng.uniform(0, 2 * PI, code.n_rows))
        moved = moved.column_rotate(rng.integers(0, 4, n_users))
        assert moved.canonicalize().allclose(code)


def test_adding_users_and_resources():
    """A new column cannot raise d_min, a new row cannot lower it"""
    rng = np.random.default_rng(20)
    for _ in range(100):
        m = random_matrix(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        d = min_distance(m).d_min
        column = np.where(rng.random(m.n_rows) < 0.6, rng.uniform(0, 2 * PI, m.n_rows), np.nan)
        if np.isnan(column).all():
            column[0] = 0.0
        row = np.where(rng.random(m.n_cols) < 0.6, rng.uniform(0, 2 * PI, m.n_cols), np.nan)
        if np.isnan(row).all():
            row[0] = 0.0
        assert min_distance(m.append_column(column)).d_min <= d + 1e-9
        assert min_distance(m.append_row(row)).d_min >= d - 1e-9


def test_spreading_length_upper_bound():
    """d_min never exceeds sqrt(2 w)"""
    rng = np.random.default_rng(21)
    for _ in range(100):
        m = random_matrix(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        assert min_distance(m).d_min <= upper_bound_spreading(m) + 1e-9
    for name in PRESETS:
        m = get_preset(name).matrix
        if m.n_cols > 6:
            continue
        assert min_distance(m).d_min <= upper_bound_spreading(m) + 1e-9


def test_concatenation_bound():
    """Stacking codes keeps at least the root-sum-square of their distances"""
    rng = np.random.default_rng(22)
    for _ in range(100):
        n_users = int(rng.integers(1, 4))
        blocks = [random_matrix(rng, int(rng.integers(1, 3)), n_users) for _ in range(int(rng.integers(2, 4)))]
        assert min_distance(concatenate(*blocks)).d_min >= concatenation_lower_bound(blocks) - 1e-9


def test_regular_lower_bound_values():
    """Bound values for the tree family and the two degree-3 graphs"""
    for n_users in (3, 4, 5, 6):
        expected = min(math.sqrt(n_users - 1) * (SQRT3 - 1), SQRT2)
        assert lower_bound_regular(tree_code(n_users).graph) == pytest.approx(expected, abs=1e-12)
    assert lower_bound_regular(get_preset("c2_4x8").matrix.graph) == pytest.approx(SQRT2 * DELTA3, abs=1e-12)
    assert lower_bound_regular(get_preset("opt4x6").matrix.graph) == pytest.approx(SQRT3 * DELTA3, abs=1e-12)


def test_regular_lower_bound_rejects_irregular_graphs():
    """Mixed code-node degrees have no bound"""
    with pytest.raises(InvalidInputError):
        lower_bound_regular(get_preset("c1_4x6").matrix.graph)
    with pytest.raises(InvalidInputError):
        lower_bound_regular(get_preset("opt4x6").matrix.graph, q=2)


def test_regular_lower_bound_holds_for_row_optimal_labelings():
    """Rows labeled with the single-resource optimum respect the bound"""
    rng = np.random.default_rng(23)
    base = get_preset("opt4x6").matrix
    graph = base.graph
    bound = lower_bound_regular(graph)
    optimum = np.array(SINGLE_RESOURCE[3][0]) * PI
    for _ in range(20):
        theta = np.zeros(base.shape)
        for n in range(graph.n_code):
            theta[n, list(graph.code_neighbors(n))] = rng.permutation(optimum) + rng.uniform(0, 2 * PI)
        m = SignatureMatrix(theta, base.support)
        # the tabulated optimum carries four decimals
        assert min_distance(m).d_min >= bound - 1e-3


def test_union_bound_leading_term():
    """At high SNR the bound is carried by the two nearest-neighbor pairs"""
    enumerator = distance_enumerator(from_rows([[0.0, "pi/6"]]))
    n0 = 0.01
    leading = 2 * q_function((SQRT3 - 1) / math.sqrt(2 * n0))
    assert abs(union_bound(enumerator, n0) / leading - 1) < 1e-4


def test_union_bound_monotone():
    """Without zero-distance pairs the bound falls as N0 falls"""
    enumerator = distance_enumerator(get_preset("c1_4x6").matrix)
    n0 = np.logspace(0, -3, 13)
    bound = union_bound(enumerator, n0)
    assert bound.shape == n0.shape
    assert np.all(np.diff(bound) < 0)
    with pytest.raises(InvalidInputError):
        union_bound(enumerator, 0.0)


def test_enumerator_records():
    """Records carry exact rational coefficients"""
    enumerator = distance_enumerator(from_rows([[0.0, "pi/6"]]))
    records = enumerator.to_records()
    assert records[0]["num"] == 2 and records[0]["den"] == 1
    frame = enumerator.to_frame()
    assert list(frame.columns) == ["d", "A_d"]
    assert frame["A_d"].sum() == pytest.approx(15.0)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
