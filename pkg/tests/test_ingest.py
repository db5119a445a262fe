"""
Unit tests for the trajectory ingestion module
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

# Add parent directory to path to import modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from segsel.errors import ConfigurationError, DataError, TrajectoryParseError
from segsel.preprocessing.ingest import (
    GeoPoint, SegmentKind, TrajectoryParser, build_segment_grid, cumulative_distance,
    haversine, load_route, parse_trajectories, parse_trajectory_file, save_route,
)

FIXTURES = Path(__file__).parent / "fixtures"


class TestParseTrajectories(unittest.TestCase):
    """Test cases for parse_trajectories"""

    def test_fixture_file(self):
        """Both fixture trips parse into one journey each"""
        journeys = parse_trajectory_file(FIXTURES / "trajectories.csv")
        self.assertEqual([j.label for j in journeys], ["T1", "T2"])
        self.assertEqual([len(j) for j in journeys], [11, 11])
        self.assertEqual(journeys[0].start_time, 28800)

    def test_gap_splits_journey(self):
        """A gap above tau starts a new journey of the same trip"""
        content = """trip_id,lat,lon,timestamp
A,0.0,0.0000,0
A,0.0,0.0009,60
A,0.0,0.0018,500
A,0.0,0.0027,560
"""
        journeys = parse_trajectories(content, tau=300)
        self.assertEqual([j.label for j in journeys], ["A", "A.1"])
        self.assertEqual([j.part for j in journeys], [0, 1])

    def test_gap_equal_to_tau_is_kept(self):
        content = "trip_id,lat,lon,timestamp\nA,0,0,0\nA,0,0.001,300\n"
        journeys = parse_trajectories(content, tau=300)
        self.assertEqual(len(journeys), 1)

    def test_unsorted_and_duplicate_timestamps(self):
        """Fixes are sorted per trip and repeated timestamps collapse to the first"""
        content = """trip_id,lat,lon,timestamp
A,0.0,0.0018,20
A,0.0,0.0000,0
A,0.0,0.0009,10
A,0.0,0.0010,10
"""
        journey = parse_trajectories(content)[0]
        self.assertEqual([f.timestamp for f in journey.fixes], [0, 10, 20])
        self.assertEqual(journey.fixes[1].point.lon, 0.0009)

    def test_malformed_number_reports_line(self):
        content = "trip_id,lat,lon,timestamp\nA,0,0,0\nA,0,0.001,10\nA,0,abc,20\n"
        with self.assertRaises(TrajectoryParseError) as ctx:
            parse_trajectories(content)
        self.assertEqual(ctx.exception.line_number, 4)
        self.assertIn("line 4", str(ctx.exception))

    def test_missing_column(self):
        with self.assertRaises(TrajectoryParseError) as ctx:
            parse_trajectories("trip_id,lat,timestamp\nA,0,0\n")
        self.assertEqual(ctx.exception.line_number, 1)

    def test_coordinate_out_of_range(self):
        with self.assertRaises(TrajectoryParseError):
            parse_trajectories("trip_id,lat,lon,timestamp\nA,91,0,0\n")

    def test_non_finite_fix_is_dropped(self):
        """Non-finite coordinates are rejected with a count, not an error"""
        content = "trip_id,lat,lon,timestamp\nA,0,0,0\nA,nan,0.001,10\nA,0,0.002,20\n"
        parser = TrajectoryParser(content)
        journeys = parser.journeys(300)
        self.assertEqual(parser.rejected_fixes, 1)
        self.assertEqual(len(journeys[0]), 2)

    def test_negative_timestamp(self):
        with self.assertRaises(TrajectoryParseError):
            parse_trajectories("trip_id,lat,lon,timestamp\nA,0,0,-5\n")

    def test_empty_input(self):
        self.assertEqual(parse_trajectories(""), [])
        self.assertEqual(parse_trajectories("trip_id,lat,lon,timestamp\n"), [])

    def test_non_positive_tau(self):
        with self.assertRaises(ConfigurationError):
            parse_trajectories("trip_id,lat,lon,timestamp\nA,0,0,0\n", tau=0)


class TestDistances(unittest.TestCase):
    """Test cases for haversine and cumulative_distance"""

    def test_haversine_equator(self):
        self.assertAlmostEqual(float(haversine(0.0, 0.0, 0.0, 0.0009)), 100.0754, delta=0.01)
        self.assertEqual(float(haversine(10.0, 20.0, 10.0, 20.0)), 0.0)

    def test_cumulative_distance(self):
        journey = parse_trajectory_file(FIXTURES / "trajectories.csv")[1]
        pairs = cumulative_distance(journey)
        self.assertEqual(pairs[0], (0.0, 0.0))
        self.assertEqual(pairs[-1][1], 250.0)
        self.assertAlmostEqual(pairs[-1][0], 1000.754, delta=0.05)
        distances = [d for d, _ in pairs]
        self.assertEqual(distances, sorted(distances))


class TestSegmentGrid(unittest.TestCase):
    """Test cases for build_segment_grid"""

    def _stops(self, positions):
        return [(p, GeoPoint(0.0, p / 111_195.0)) for p in positions]

    def test_regular_grid(self):
        grid = build_segment_grid(1000, self._stops([0, 500, 1000]), spacing=100)
        self.assertEqual(list(grid.distances), [float(100 * k) for k in range(11)])
        self.assertEqual(grid.stop_indices, [0, 5, 10])
        self.assertEqual(len(grid.interpolation_indices), 8)
        self.assertEqual(grid.last_index, 10)

    def test_points_near_landmarks_are_dropped(self):
        """Interpolated points closer than spacing/2 to a landmark disappear"""
        grid = build_segment_grid(500, self._stops([240]), spacing=100)
        self.assertEqual(list(grid.distances), [0.0, 100.0, 240.0, 300.0, 400.0, 500.0])
        self.assertEqual(grid.segments[2].kind, SegmentKind.STOP)
        self.assertEqual(grid.segments[0].kind, SegmentKind.INTERPOLATED)

    def test_intersections_are_landmarks(self):
        grid = build_segment_grid(
            1000, self._stops([0, 1000]), [(350.0, GeoPoint(0.0, 0.003))], spacing=100,
        )
        self.assertIn(grid.distances.tolist().index(350.0), grid.landmark_indices)
        self.assertEqual(grid.stop_indices, [0, len(grid) - 1])

    def test_rebuild_from_own_landmarks_is_identical(self):
        grid = build_segment_grid(
            1000, self._stops([0, 240, 1000]), [(650.0, GeoPoint(0.0, 0.006))], spacing=100,
        )
        stops, intersections = grid.landmarks()
        again = build_segment_grid(grid.route_length, stops, intersections, spacing=grid.spacing)
        self.assertEqual(again.digest, grid.digest)
        self.assertEqual(again.distances.tolist(), grid.distances.tolist())

    def test_duplicate_landmark_position(self):
        with self.assertRaises(ConfigurationError):
            build_segment_grid(1000, self._stops([0, 500]), [(500.0, GeoPoint(0.0, 0.0045))])

    def test_landmark_outside_route(self):
        with self.assertRaises(ConfigurationError):
            build_segment_grid(1000, self._stops([0, 1200]))

    def test_bad_lengths(self):
        with self.assertRaises(ConfigurationError):
            build_segment_grid(0, [])
        with self.assertRaises(ConfigurationError):
            build_segment_grid(1000, [], spacing=-1)

    def test_invalid_point(self):
        with self.assertRaises(DataError):
            GeoPoint(0.0, 181.0)


class TestRouteFiles(unittest.TestCase):
    """Test cases for route description files"""

    def test_fixture_route(self):
        grid = load_route(FIXTURES / "route.yaml")
        self.assertEqual(grid.route_id, "fixture-line")
        self.assertEqual(grid.stop_indices, [0, 5, 10])
        self.assertEqual(grid.segments[5].line_count, 2)
        self.assertEqual(grid.segments[3].line_count, 1)

    def test_saved_route_rebuilds_same_grid(self):
        grid = load_route(FIXTURES / "route.yaml")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "route.yaml"
            save_route(grid, path)
            again = load_route(path)
        self.assertEqual(again.digest, grid.digest)
        self.assertEqual(again.segments[5].line_count, 2)

    def test_missing_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "route.yaml"
            path.write_text("route_id: x\nstops: []\n", encoding="utf-8")
            with self.assertRaises(ConfigurationError):
                load_route(path)


if __name__ == '__main__':
    unittest.main()
