import json
from pathlib import Path

import pytest

from gisl import __version__
from gisl._util import file_sha256
from gisl.cli import ConfigError, load_config_file, main, parse_range

DATA = Path(__file__).parent / "data"
SMALL = ["--num-vars", "3", "--num-edges", "2", "--n", "200", "--n-conf", "0", "--n-sel", "1"]


def hashes(directory, skip=("manifest.json",)):
    return {
        str(p.relative_to(directory)): file_sha256(p)
        for p in sorted(Path(directory).rglob("*"))
        if p.is_file() and p.name not in skip
    }


@pytest.fixture(scope="module")
def instance(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "inst"
    assert main(["simulate", "--out", str(out), "--seed", "4", *SMALL]) == 0
    return out


class TestHelpers:
    def test_parse_range(self):
        assert parse_range("1-3") == (1, 3)
        assert parse_range("2") == 2
        with pytest.raises(ConfigError):
            parse_range("3-1")

    def test_config_files(self, tmp_path):
        toml = tmp_path / "c.toml"
        toml.write_text('alpha = 0.01\nseed = 3\n')
        assert load_config_file(toml) == {"alpha": 0.01, "seed": 3}
        bad = tmp_path / "c.yaml"
        bad.write_text("x")
        with pytest.raises(ConfigError):
            load_config_file(bad)

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            main(["--version"])
        assert __version__ in capsys.readouterr().out


class TestSimulate:
    def test_layout_and_manifest(self, instance):
        files = set(hashes(instance))
        assert {"d0.csv", "scm.json", "truth.json", "instance.json"} <= files
        assert {"perturbed/X1.csv", "perturbed/X2.csv", "perturbed/X3.csv"} <= files
        manifest = json.loads((instance / "manifest.json").read_text())
        assert manifest["command"] == "simulate" and manifest["version"] == __version__
        assert manifest["config"]["seed"] == 4

    def test_same_seed_identical(self, instance, tmp_path):
        assert main(["simulate", "--out", str(tmp_path / "again"), "--seed", "4", *SMALL]) == 0
        assert hashes(tmp_path / "again") == hashes(instance)

    def test_manifest_rerun(self, instance, tmp_path):
        out = tmp_path / "rerun"
        assert main(["simulate", "--config", str(instance / "manifest.json"), "--out", str(out)]) == 0
        assert hashes(out) == hashes(instance)

    def test_replicates(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--replicates", "2", *SMALL]) == 0
        assert (tmp_path / "seed-0" / "d0.csv").is_file() and (tmp_path / "seed-1" / "d0.csv").is_file()

    def test_too_many_edges(self, tmp_path, capsys):
        assert main(["simulate", "--out", str(tmp_path), "--num-vars", "3", "--num-edges", "9"]) == 2
        assert "configuration error" in capsys.readouterr().err


class TestDiscoverEvaluate:
    def test_pipeline(self, instance, tmp_path, capsys):
        res = tmp_path / "res"
        assert main(["discover", "--instance", str(instance), "--out", str(res), "--dump-tests"]) == 0
        for name in ("result.json", "result.dot", "tests.csv", "manifest.json"):
            assert (res / name).is_file()
        ev = tmp_path / "ev"
        z = tmp_path / "z.csv"
        z.write_text("X1,0.5\nX2,0.5\nX3,0.0\n")
        args = ["evaluate", "--result", str(res / "result.json"), "--truth", str(instance), "--zscores", str(z)]
        assert main([*args, "--out", str(ev)]) == 0
        report = json.loads((ev / "report.json").read_text())
        assert {"precision", "recall", "f1", "shd"} <= set(report["truth"])
        assert "accuracy" in report["zscore"]
        assert "zscore accuracy" in capsys.readouterr().out

    def test_expression_input_untested(self, tmp_path, caplog):
        out = tmp_path / "r"
        assert main(["discover", "--expression", str(DATA / "expression.csv"), "--out", str(out)]) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["format"] == "gisl-result"

    def test_needs_one_input(self, tmp_path):
        assert main(["discover", "--out", str(tmp_path)]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["discover", "--expression", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1

    def test_evaluate_requires_reference(self, tmp_path):
        assert main(["evaluate", "--result", "x.json", "--out", str(tmp_path)]) == 2


class TestBench:
    ARGS = ["--num-vars", "3", "--n", "200", "--n-conf", "0", "--n-sel", "1", "--seeds", "2"]

    def test_grid_and_resume(self, tmp_path, capsys):
        out = tmp_path / "b"
        assert main(["bench", "--out", str(out), *self.ARGS]) == 0
        first = (out / "summary.csv").read_text()
        assert len(first.splitlines()) == 2
        report = out / "vars3_n200_hard_sel1" / "seed-1" / "report.json"
        stamp = report.stat().st_mtime_ns
        assert main(["bench", "--out", str(out), "--resume", *self.ARGS]) == 0
        assert report.stat().st_mtime_ns == stamp
        assert (out / "summary.csv").read_text() == first
        assert "selection_accuracy" in capsys.readouterr().out

    def test_bad_seeds(self, tmp_path):
        assert main(["bench", "--out", str(tmp_path), "--seeds", "0"]) == 2
