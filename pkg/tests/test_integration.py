"""Integration tests for the complete segsel command-line pipeline."""

import json
import shutil
import sys
import tempfile
import unittest
from io import StringIO
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from run_segsel import main

FIXTURES = Path(__file__).parent / "fixtures"
CONFIG = str(FIXTURES / "config.yaml")


def run_cli(*argv):
    """Run the CLI and return (exit code, captured stdout)."""
    captured_output = StringIO()
    sys.stdout = captured_output
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    finally:
        sys.stdout = sys.__stdout__
    return code, captured_output.getvalue()


@pytest.mark.integration
class TestIngestCommand(unittest.TestCase):
    """Test the ingest command integration."""

    def test_ingest_fixture(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, output = run_cli(
                "ingest", "--data", str(FIXTURES / "trajectories.csv"),
                "--route", str(FIXTURES / "route.yaml"), "--out", tmp,
            )
            self.assertEqual(code, 0)
            self.assertIn("Trips interpolated: 2", output)
            self.assertTrue((Path(tmp) / "arrivals.csv").exists())
            self.assertTrue((Path(tmp) / "route.yaml").exists())
            manifest = json.loads((Path(tmp) / "ingest_manifest.json").read_text(encoding="utf-8"))
            self.assertEqual(len(manifest["config_digest"]), 16)

    def test_ingest_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, output = run_cli(
                "ingest", "--data", str(Path(tmp) / "missing.csv"),
                "--route", str(FIXTURES / "route.yaml"), "--out", tmp,
            )
        self.assertEqual(code, 1)
        self.assertIn("Error:", output)
        self.assertIn("missing.csv", output)


@pytest.mark.integration
class TestPipeline(unittest.TestCase):
    """Test synth, train, evaluate and ablate end to end."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.data = str(Path(cls.tmp) / "data")
        code, _ = run_cli("synth", "--config", CONFIG, "--out", cls.data)
        assert code == 0

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def _train(self, name, *extra):
        out = str(Path(self.tmp) / name)
        code, output = run_cli("train", "--config", CONFIG, "--data", self.data, "--out", out, *extra)
        self.assertEqual(code, 0, output)
        return Path(out), output

    def test_synth_outputs(self):
        for name in ("route.yaml", "train.csv", "test.csv", "synth_manifest.json"):
            self.assertTrue((Path(self.data) / name).exists(), name)

    def test_train_outputs(self):
        out, output = self._train("run")
        self.assertIn("Held-out MAE:", output)
        for name in ("checkpoint.json", "convergence.csv", "convergence.svg", "train_report.json"):
            self.assertTrue((out / name).exists(), name)
        lines = (out / "convergence.csv").read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("# config_digest: "))
        self.assertEqual(len(lines), 2 + 2)

    def test_train_is_byte_reproducible(self):
        a, _ = self._train("repeat-a")
        b, _ = self._train("repeat-b")
        for name in ("checkpoint.json", "convergence.csv"):
            self.assertEqual((a / name).read_bytes(), (b / name).read_bytes(), name)

    def test_seed_flag_changes_run(self):
        a, _ = self._train("seed-a", "--seed", "11")
        b, _ = self._train("seed-b", "--seed", "12")
        self.assertNotEqual((a / "checkpoint.json").read_bytes(), (b / "checkpoint.json").read_bytes())

    def test_evaluate_reproduces_training_mae(self):
        out, _ = self._train("eval")
        code, output = run_cli(
            "evaluate", "--data", self.data, "--checkpoint", str(out / "checkpoint.json"), "--out", str(out),
        )
        self.assertEqual(code, 0, output)
        trained = json.loads((out / "train_report.json").read_text(encoding="utf-8"))
        evaluated = json.loads((out / "evaluate.json").read_text(encoding="utf-8"))
        self.assertEqual(trained["test_mae"], evaluated["test_mae"])
        self.assertEqual(evaluated["all_segments_feature_count"], 21)

    def test_ablate_selection(self):
        out = Path(self.tmp) / "sweeps"
        code, output = run_cli("ablate", "--config", CONFIG, "--data", self.data, "--sweep", "selection",
                               "--out", str(out))
        self.assertEqual(code, 0, output)
        self.assertIn("SWEEP: selection", output)
        doc = json.loads((out / "ablation_selection.json").read_text(encoding="utf-8"))
        self.assertEqual([r["strategy"] for r in doc["reports"]], ["ALL", "RS", "RL"])
        self.assertTrue((out / "ablation_selection.svg").exists())

    def test_single_arrivals_file_is_split(self):
        split_dir = Path(self.tmp) / "split"
        split_dir.mkdir()
        shutil.copy(Path(self.data) / "route.yaml", split_dir / "route.yaml")
        shutil.copy(Path(self.data) / "train.csv", split_dir / "arrivals.csv")
        out = str(Path(self.tmp) / "split-run")
        code, output = run_cli("train", "--config", CONFIG, "--data", str(split_dir), "--out", out)
        self.assertEqual(code, 0, output)

    def test_train_without_seed_fails(self):
        code, output = run_cli("train", "--data", self.data, "--out", str(Path(self.tmp) / "noseed"))
        self.assertEqual(code, 1)
        self.assertIn("seed", output)

    def test_synth_rejects_single_training_trip(self):
        config = Path(self.tmp) / "one_trip.yaml"
        config.write_text("seed: 3\nsynthetic:\n  trips_train: 1\n", encoding="utf-8")
        code, output = run_cli("synth", "--config", str(config), "--out", str(Path(self.tmp) / "one"))
        self.assertEqual(code, 1)
        self.assertIn("trips_train", output)
        self.assertFalse((Path(self.tmp) / "one" / "train.csv").exists())

    def test_mismatched_route_fails(self):
        other = Path(self.tmp) / "other"
        other.mkdir()
        shutil.copy(FIXTURES / "route.yaml", other / "route.yaml")
        shutil.copy(Path(self.data) / "train.csv", other / "train.csv")
        shutil.copy(Path(self.data) / "test.csv", other / "test.csv")
        code, output = run_cli("train", "--config", CONFIG, "--data", str(other), "--out", str(other / "out"))
        self.assertEqual(code, 1)
        self.assertIn("different route grid", output)


class TestHelp(unittest.TestCase):
    """Test the bare invocation."""

    def test_no_command_prints_help(self):
        code, output = run_cli()
        self.assertEqual(code, 0)
        self.assertIn("segsel", output)


if __name__ == '__main__':
    unittest.main()
