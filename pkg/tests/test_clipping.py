import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fatclip.clipping import clip
from fatclip.core import as_vector, vec_norm


def test_passthrough():
    rep = clip(as_vector([3, 4]), 10)
    assert rep.output.tolist() == [3, 4]
    assert not rep.was_clipped
    assert rep.input_norm == 5


def test_scaled():
    rep = clip(as_vector([3, 4]), 2.5)
    assert rep.output.tolist() == [1.5, 2.0]
    assert rep.was_clipped


def test_zero_vector():
    rep = clip(as_vector([0, 0]), 1)
    assert rep.output.tolist() == [0, 0]
    assert not rep.was_clipped


def test_output_is_a_copy():
    v = as_vector([1.0, 1.0])
    out = clip(v, 10).output
    out[0] = 5
    assert v[0] == 1.0


@pytest.mark.parametrize("lam", [0.0, -1.0, float("nan")])
def test_bad_threshold(lam):
    with pytest.raises(ValueError):
        clip(as_vector([1.0]), lam)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_nonfinite_input(bad):
    with pytest.raises(ValueError):
        clip(as_vector([1.0, bad]), 1.0)


vectors = st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=12).map(as_vector)
lams = st.floats(1e-6, 1e6)


@given(vectors, lams)
def test_norm_cap_and_report(v, lam):
    rep = clip(v, lam)
    assert vec_norm(rep.output) <= lam
    assert rep.was_clipped == (rep.input_norm > lam)
    assert vec_norm(rep.output) == pytest.approx(min(rep.input_norm, lam), rel=1e-12, abs=0)


@given(vectors, lams)
def test_idempotent(v, lam):
    once = clip(v, lam).output
    assert np.array_equal(clip(once, lam).output, once)


@given(vectors, lams, st.floats(1e-3, 1e3))
def test_scale_equivariance(v, lam, s):
    a = clip(s * v, s * lam).output
    b = s * clip(v, lam).output
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * max(1.0, vec_norm(b)))


@given(vectors, lams)
def test_direction_preserved(v, lam):
    n = vec_norm(v)
    if n == 0:
        return
    out = clip(v, lam).output
    c = float(np.dot(out, v)) / (n * n)
    assert 0 < c <= 1 or math.isclose(c, 1.0)
    residual = out - c * v
    assert vec_norm(residual) <= 1e-10 * max(1.0, vec_norm(out))
