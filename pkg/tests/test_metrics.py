import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rectidic.dic import DisplacementField, RoiMask
from rectidic.errors import InvalidParameter
from rectidic.metrics import abs_errors, error_stats, mae, sdae


def _field(shape=(4, 5), origin=(10, 20), spacing=5, u=0.0, v=0.0):
    f = DisplacementField.empty(RoiMask(np.ones(shape, bool), (0, 0), origin, spacing))
    f.u[:] = u
    f.v[:] = v
    f.valid[:] = True
    return f


def test_known_errors():
    f = _field(shape=(1, 4))
    f.u[:] = [1.0, 2.0, 3.0, 4.0]
    f.v[:] = [0.0, 0.0, 0.0, -2.0]
    t = _field(shape=(1, 4))
    assert mae(f, t) == (2.5, 0.5)
    su, sv = sdae(f, t)
    assert su == pytest.approx(np.std([1, 2, 3, 4])) and sv == pytest.approx(np.std([0, 0, 0, 2]))
    st_ = error_stats(f, t)
    assert st_.count == 4 and st_.as_dict()["mae_u"] == 2.5


def test_callable_truth():
    f = _field()
    X, Y = f.grid_xy()
    f.u[:] = 0.01 * X
    f.v[:] = -0.02 * Y + 0.5
    s = error_stats(f, lambda x, y: (0.01 * x, -0.02 * y))
    assert s.mae_u == pytest.approx(0, abs=1e-15)
    assert s.mae_v == pytest.approx(0.5) and s.sdae_v == pytest.approx(0, abs=1e-12)


def test_invalid_points_excluded():
    f = _field(u=1.0)
    f.u[0, 0] = 100.0
    f.valid[0, 0] = False
    t = _field()
    t.valid[1, 1] = False
    s = error_stats(f, t)
    assert s.count == 18 and s.mae_u == 1.0
    f.valid[:] = False
    with pytest.raises(InvalidParameter):
        mae(f, t)


def test_lattice_alignment():
    m = _field(shape=(3, 3), origin=(20, 30))
    big = _field(shape=(8, 8), origin=(5, 10))
    X, Y = big.grid_xy()
    big.u[:] = X
    big.v[:] = Y
    mx, my = m.grid_xy()
    m.u[:] = mx
    m.v[:] = my
    assert error_stats(m, big).mae_u == 0 and error_stats(m, big).count == 9
    # a partially overlapping truth only contributes its overlap
    part = _field(shape=(2, 2), origin=(20, 30))
    assert error_stats(m, part).count == 4


def test_grid_mismatch_is_reported():
    m = _field(origin=(10, 20))
    with pytest.raises(InvalidParameter, match="spacing"):
        mae(m, _field(origin=(12, 20)))
    with pytest.raises(InvalidParameter):
        mae(m, _field(spacing=4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3, 3))
def test_offset_error_properties(vals, c):
    f = _field(shape=(2, 3))
    f.u[:] = np.reshape(vals, (2, 3))
    t = _field(shape=(2, 3))
    t.u[:] = f.u + c
    eu, ev = abs_errors(f, t)
    np.testing.assert_allclose(eu, abs(c), atol=1e-12)
    s = error_stats(f, t)
    assert s.mae_u == pytest.approx(abs(c), abs=1e-12)
    assert s.sdae_u >= 0 and s.mae_v == 0
