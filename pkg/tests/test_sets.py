import numpy as np
import pytest

from sweepctl.errors import UnsupportedSet
from sweepctl.sets import Ball, Box, Halfspaces, from_json


class TestBox:

    def test_project_and_distance(self):
        B = Box([-1.0, -1.0], [1.0, 1.0])
        np.testing.assert_allclose(B.project([2.0, 0.5]), [1.0, 0.5])
        assert B.distance([2.0, 3.0]) == pytest.approx(np.hypot(1.0, 2.0))

    def test_distances_rowwise(self):
        B = Box([0.0], [1.0])
        np.testing.assert_allclose(B.distances([[-1.0], [0.5], [3.0]]), [1.0, 0.0, 2.0])

    def test_normal_cone_distance(self):
        B = Box([-1.0, -1.0], [1.0, 1.0])
        # upper face of the first coordinate admits nonnegative psi_1 only
        assert B.normal_cone_distance([0.5, 0.0], [1.0, 0.3]) == 0.0
        assert B.normal_cone_distance([-0.5, 0.0], [1.0, 0.3]) == pytest.approx(0.5)
        assert B.normal_cone_distance([0.0, 0.2], [0.0, 0.0]) == pytest.approx(0.2)

    def test_support(self):
        B = Box([-1.0, -1.0], [1.0, 1.0])
        assert B.support([0.5, -2.0]) == pytest.approx(2.5)

    def test_point_freezes(self):
        P = Box.point([0.0, 0.0])
        assert P.is_singleton
        K, sign = P.cone_generators([0.0, 0.0])
        assert K.shape == (2, 2) and np.all(sign == 0)

    def test_empty_box(self):
        B = Box(np.zeros(0), np.zeros(0))
        assert B.dim == 0
        assert B.distances(np.zeros((4, 0))).tolist() == [0.0] * 4


class TestBall:

    def test_project(self):
        B = Ball([0.0, 0.0], 2.0)
        np.testing.assert_allclose(B.project([3.0, 4.0]), [1.2, 1.6])
        np.testing.assert_allclose(B.project([0.3, 0.4]), [0.3, 0.4])

    def test_normal_cone(self):
        B = Ball([0.0, 0.0], 1.0)
        assert B.normal_cone_distance([2.0, 0.0], [1.0, 0.0]) == 0.0
        assert B.normal_cone_distance([0.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
        assert B.normal_cone_distance([0.0, 1.0], [0.1, 0.0]) == pytest.approx(1.0)

    def test_support(self):
        assert Ball([1.0, 0.0], 2.0).support([0.0, 3.0]) == pytest.approx(6.0)


class TestHalfspaces:

    def test_project_and_support(self):
        H = Halfspaces([[1.0, 0.0], [0.0, 1.0]], [1.0, 2.0])
        np.testing.assert_allclose(H.project([3.0, 3.0]), [1.0, 2.0], atol=1e-12)
        assert H.support([1.0, 1.0]) == pytest.approx(3.0)
        assert H.support([-1.0, 0.0]) == np.inf

    def test_normal_cone_distance(self):
        H = Halfspaces([[1.0, 0.0]], [1.0])
        assert H.normal_cone_distance([2.0, 0.0], [1.0, 5.0]) < 1e-12
        assert H.normal_cone_distance([-2.0, 0.0], [1.0, 5.0]) == pytest.approx(2.0)


@pytest.mark.parametrize("desc", [
    {"kind": "box", "lo": [-1, 0], "hi": [1, 2]},
    {"kind": "ball", "center": [0, 0], "radius": 1.5},
    {"kind": "halfspaces", "G": [[1, 0]], "k": [2]},
])
def test_json_roundtrip(desc):
    s = from_json(desc)
    t = from_json(s.to_json())
    y = np.array([3.0, -1.0])
    np.testing.assert_allclose(s.project(y), t.project(y))


def test_unknown_kind():
    with pytest.raises(UnsupportedSet):
        from_json({"kind": "torus"})
