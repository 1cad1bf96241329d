"""
Unit tests for convex polygon helpers
"""
import math
import unittest
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sketchwrap.collision import (
    contact_point,
    convex_hull,
    front_collision,
    point_in_convex,
    polygons_overlap,
    rectangle,
)
from sketchwrap.maneuver import is_convex_ccw


class TestRectangle(unittest.TestCase):

    def test_axis_aligned(self):
        rect = rectangle((1.0, 2.0), 0.0, 4.0, 2.0)
        np.testing.assert_allclose(rect, [[-1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [-1.0, 3.0]])
        self.assertTrue(is_convex_ccw(rect))

    def test_rotated_stays_counter_clockwise(self):
        rect = rectangle((0.0, 0.0), 2.0, 4.0, 2.0)
        self.assertTrue(is_convex_ccw(rect))
        np.testing.assert_allclose(rect.mean(axis=0), [0.0, 0.0], atol=1e-12)


class TestOverlap(unittest.TestCase):

    def setUp(self):
        self.square = rectangle((0.0, 0.0), 0.0, 2.0, 2.0)

    def test_overlapping(self):
        self.assertTrue(polygons_overlap(self.square, rectangle((1.5, 0.5), 0.0, 2.0, 2.0)))

    def test_touching_counts(self):
        self.assertTrue(polygons_overlap(self.square, rectangle((2.0, 0.0), 0.0, 2.0, 2.0)))

    def test_separated(self):
        self.assertFalse(polygons_overlap(self.square, rectangle((3.0, 0.0), 0.0, 2.0, 2.0)))

    def test_diamond_near_corner(self):
        diamond = rectangle((2.2, 2.2), math.pi / 4, 1.0, 1.0)
        self.assertFalse(polygons_overlap(self.square, diamond))

    def test_point_in_convex(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        np.testing.assert_array_equal(point_in_convex(self.square, points), [True, True, False])
        np.testing.assert_array_equal(point_in_convex(self.square, points, strict=True), [True, False, False])


class TestContact(unittest.TestCase):

    def test_no_contact(self):
        a = rectangle((0.0, 0.0), 0.0, 2.0, 2.0)
        self.assertIsNone(contact_point(a, rectangle((5.0, 0.0), 0.0, 2.0, 2.0)))

    def test_contained_vertex(self):
        a = rectangle((0.0, 0.0), 0.0, 2.0, 2.0)
        b = rectangle((1.5, 1.5), 0.0, 2.0, 2.0)
        np.testing.assert_allclose(contact_point(a, b), [0.5, 0.5])

    def test_deepest_vertex_along_min_overlap_axis(self):
        av = rectangle((0.0, 0.0), 0.0, 5.0, 2.0)
        # x overlap 0.5 < y overlap 0.7; the AV corner (2.5, 1) is inside too but is not the deepest
        other = rectangle((3.0, 1.8), 0.0, 2.0, 3.0)
        np.testing.assert_allclose(contact_point(av, other), [2.0, 0.3])

    def test_crossing_edges_fall_back_to_centroids(self):
        a = rectangle((0.0, 0.0), 0.0, 10.0, 1.0)
        b = rectangle((0.0, 0.0), 0.0, 1.0, 10.0)
        np.testing.assert_allclose(contact_point(a, b), [0.0, 0.0], atol=1e-12)

    def test_front_collision(self):
        av = rectangle((1.5, 0.0), 0.0, 5.0, 2.0)
        ahead = rectangle((4.5, 0.0), 0.0, 2.0, 2.0)
        behind = rectangle((-1.5, 0.0), 0.0, 2.0, 2.0)
        self.assertTrue(front_collision(av, 0.0, ahead))
        self.assertFalse(front_collision(av, 0.0, behind))
        self.assertFalse(front_collision(av, 0.0, rectangle((20.0, 0.0), 0.0, 2.0, 2.0)))

    def test_side_contact_behind_center_is_not_front(self):
        av = rectangle((1.5, 0.0), 0.0, 5.0, 2.0)
        self.assertFalse(front_collision(av, 0.0, rectangle((0.0, 1.6), 0.0, 1.0, 1.5)))
        self.assertTrue(front_collision(av, 0.0, rectangle((3.0, 1.6), 0.0, 1.0, 1.5)))


class TestConvexHull(unittest.TestCase):

    def test_interior_point_dropped(self):
        points = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], [1.0, 1.0]]
        hull = convex_hull(points)
        self.assertEqual(len(hull), 4)
        self.assertTrue(is_convex_ccw(hull))


if __name__ == '__main__':
    unittest.main()
