import json

import numpy as np
import pytest

from wdmatch.cli import main
from wdmatch.data import load_dataset


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def synthetic_payload(**overrides):
    payload = {
        "synthetic": {
            "dim": 3, "n": 40, "separation": 6.0, "angle": 0.3,
            "translation": [0.5, 0.0, 0.0], "noise": 0.0, "seed": 3,
        },
        "hyperparams": {"outer_iters": 3, "subgrad_iters": 25, "k": 3, "r": 2},
        "folds": 4,
        "seed": 1,
        "baselines": ["source-only"],
    }
    payload.update(overrides)
    return payload


class TestCvCommand:
    def test_happy_path(self, tmp_path, capsys):
        config = write_config(tmp_path, synthetic_payload())
        out = tmp_path / "report.json"
        assert main(["cv", "--config", str(config), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert set(report["methods"]) == {"proposed", "source-only"}
        assert (tmp_path / "report.tsv").is_file()

    def test_missing_dataset_file_exit_1(self, tmp_path, capsys):
        payload = {
            "source": {"path": str(tmp_path / "absent.csv"), "format": "dense-csv"},
            "target": {"path": str(tmp_path / "absent2.csv"), "format": "dense-csv"},
        }
        config = write_config(tmp_path, payload)
        code = main(["cv", "--config", str(config), "--out", str(tmp_path / "r.json")])
        assert code == 1
        assert "absent" in capsys.readouterr().err

    def test_unknown_flag_exit_1(self, tmp_path, capsys):
        code = main(["cv", "--config", "x.json", "--frobnicate"])
        assert code == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_byte_identical_reports_modulo_timing(self, tmp_path):
        config = write_config(tmp_path, synthetic_payload())
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["cv", "--config", str(config), "--out", str(out_a)]) == 0
        assert main(["cv", "--config", str(config), "--out", str(out_b)]) == 0

        def canonical(path):
            report = json.loads(path.read_text())
            for entry in report["methods"].values():
                entry.pop("timing")
            return json.dumps(report, sort_keys=True).encode()

        assert canonical(out_a) == canonical(out_b)
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


class TestFitCommand:
    def test_fit_and_trace(self, tmp_path):
        config = write_config(tmp_path, synthetic_payload())
        out = tmp_path / "model.json"
        trace = tmp_path / "trace.jsonl"
        code = main([
            "fit", "--config", str(config), "--out", str(out), "--trace", str(trace),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert {"model", "pi", "objective_trace", "iterations"} <= set(payload)
        values = [v["total"] for v in map(json.loads, trace.read_text().splitlines())]
        assert values == payload["objective_trace"]


class TestSynthCommand:
    def test_round_trip_through_fit(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "dim": 3, "n": 30, "separation": 5.0, "angle": 0.2,
            "translation": 0.4, "noise": 0.0, "seed": 9,
        }))
        outdir = tmp_path / "gen"
        assert main(["synth", "--spec", str(spec), "--out-prefix", str(outdir) + "/"]) == 0
        source = load_dataset(outdir / "source.csv", "dense-csv")
        target = load_dataset(outdir / "target.csv", "dense-csv")
        assert source.n == target.n == 30
        assert target.labeled_count == 3

        config = write_config(tmp_path, {
            "source": {"path": str(outdir / "source.csv"), "format": "dense-csv"},
            "target": {"path": str(outdir / "target.csv"), "format": "dense-csv"},
            "hyperparams": {"outer_iters": 2, "subgrad_iters": 20, "k": 3, "r": 2},
        })
        model_out = tmp_path / "model.json"
        assert main(["fit", "--config", str(config), "--out", str(model_out)]) == 0
        assert model_out.is_file()

    def test_prefix_without_slash(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"dim": 2, "n": 12, "separation": 2.0}))
        prefix = tmp_path / "run1_"
        assert main(["synth", "--spec", str(spec), "--out-prefix", str(prefix)]) == 0
        assert (tmp_path / "run1_source.csv").is_file()
        assert (tmp_path / "run1_target.csv").is_file()


class TestDumpGraphCommand:
    def test_graph_dump(self, tmp_path):
        data = tmp_path / "points.csv"
        rows = ["1," + ",".join(map(str, row)) for row in np.random.default_rng(0).standard_normal((8, 2))]
        data.write_text("\n".join(rows) + "\n")
        out = tmp_path / "graph.json"
        assert main(["dump-graph", "--data", str(data), "--k", "3", "--out", str(out)]) == 0
        graph = json.loads(out.read_text())
        assert len(graph) == 8
        for i, entry in graph.items():
            assert len(entry["neighbors"]) == 3
            assert int(i) not in entry["neighbors"]
            assert sum(entry["weights"]) == pytest.approx(1.0, abs=1e-9)
