import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from levyldp.triple import TripleSpec, as_hvector, norm_h, norm_v, norm_vstar, pairing


def test_rejects_invalid_parameters():
    with pytest.raises(ValueError):
        TripleSpec(2, [1.0, 0.0])
    with pytest.raises(ValueError):
        TripleSpec(2, [1.0, 1.0], alpha=1.0)
    with pytest.raises(ValueError):
        TripleSpec(2, [1.0, 1.0], theta=0.0)
    with pytest.raises(ValueError):
        TripleSpec(2, [1.0, 1.0], beta=-1.0)
    with pytest.raises(ValueError):
        TripleSpec(2, [1.0])


def test_norm_h_examples():
    assert norm_h(TripleSpec.dirichlet(3), np.zeros(3)) == 0.0
    assert norm_h(TripleSpec(2, [1, 1]), [3.0, 4.0]) == 5.0
    assert norm_h(TripleSpec(3, [1, 1, 1]), [1.0, 1.0, 1.0]) == pytest.approx(1.7320508, abs=1e-7)


def test_weighted_norms():
    unit = TripleSpec(2, [1.0, 1.0])
    assert norm_v(unit, [1, 0]) == norm_vstar(unit, [1, 0]) == norm_h(unit, [1, 0]) == 1.0
    s = TripleSpec(2, [4.0, 1.0])
    assert norm_v(s, [1, 0]) == 2.0
    assert norm_vstar(s, [1, 0]) == 0.5
    for fn in (norm_h, norm_v, norm_vstar):
        assert fn(s, [0.0, 0.0]) == 0.0


def test_pairing_examples():
    s = TripleSpec(2, [1.0, 4.0])
    assert pairing(s, [0, 0], [0, 0]) == 0.0
    assert pairing(s, [1, 0], [0, 1]) == 0.0
    assert pairing(s, [1, 2], [3, -1]) == 1.0


def test_dimension_mismatch():
    s = TripleSpec.dirichlet(3)
    for fn in (norm_h, norm_v, norm_vstar):
        with pytest.raises(ValueError, match="dimension mismatch"):
            fn(s, [1.0, 2.0])
    with pytest.raises(ValueError, match="dimension mismatch"):
        pairing(s, [1.0, 2.0, 3.0], [1.0])
    with pytest.raises(ValueError):
        as_hvector(s, 1.0)


def test_pairing_is_h_inner_product_on_random_vectors():
    rng = np.random.default_rng(0)
    s = TripleSpec.dirichlet(16)
    u, v = rng.standard_normal((2, 1000, 16))
    assert np.allclose(pairing(s, u, v), np.einsum("ij,ij->i", u, v), rtol=1e-14, atol=1e-14)


vectors = arrays(np.float64, 6, elements=st.floats(-1e3, 1e3))


@settings(max_examples=200, deadline=None)
@given(vectors, vectors)
def test_holder_bound(u, v):
    s = TripleSpec.dirichlet(6)
    assert abs(pairing(s, u, v)) <= norm_vstar(s, u) * norm_v(s, v) * (1 + 1e-12) + 1e-300


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_norm_ordering_and_interpolation(v):
    s = TripleSpec.dirichlet(6)
    lo, mid, hi = norm_vstar(s, v), norm_h(s, v), norm_v(s, v)
    assert lo <= mid * (1 + 1e-12) and mid <= hi * (1 + 1e-12)
    assert mid ** 2 <= lo * hi * (1 + 1e-12) + 1e-300


def test_batched_evaluation_matches_rows():
    s = TripleSpec.dirichlet(4)
    v = np.random.default_rng(1).standard_normal((5, 3, 4))
    assert norm_v(s, v).shape == (5, 3)
    assert norm_v(s, v)[2, 1] == norm_v(s, v[2, 1])


def test_norms_survive_extreme_scales():
    s = TripleSpec.dirichlet(2)
    tiny, huge = np.array([3e-200, 4e-200]), np.array([3e200, 4e200])
    assert norm_h(s, tiny) == pytest.approx(5e-200, rel=1e-14)
    assert norm_h(s, huge) == pytest.approx(5e200, rel=1e-14)
    assert norm_v(s, tiny) == pytest.approx(np.sqrt(9 + 64) * 1e-200, rel=1e-14)
    assert norm_vstar(s, huge) == pytest.approx(np.sqrt(9 + 4) * 1e200, rel=1e-14)
