"""Command-line interface: subcommands, exit codes and output files."""

import json
import subprocess
import sys

import numpy as np
import pytest

from stone_erosion import cli
from stone_erosion.analysis import parse_table
from stone_erosion.config import parse_config
from stone_erosion.io import read_front_log, read_manifest, read_snapshot

SHORT_RUN = """\
[scenario]
kind = "catastrophic_1d"
N = 20
dt = 10.0
duration = 600.0

[output]
snapshots = [300.0]
front_every = 100.0
"""

FAILING_RUN = """\
[scenario]
kind = "catastrophic_1d"
N = 20
dt = 3600.0
duration = 7200.0

[solver]
max_iter = 1
"""


@pytest.fixture
def config(tmp_path):
    def write(text, name="run.toml"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write


@pytest.fixture(autouse=True)
def no_env_override(monkeypatch):
    monkeypatch.delenv(cli.ENV_OUTPUT, raising=False)


class TestSimpleCommands:
    def test_print_defaults_is_valid_config(self, capsys):
        assert cli.main(["print-defaults", "--kind", "standard_2d"]) == cli.EXIT_OK
        cfg = parse_config(capsys.readouterr().out)
        assert cfg.kind == "standard_2d"

    def test_validate_ok(self, config, capsys):
        assert cli.main(["validate-config", config(SHORT_RUN)]) == cli.EXIT_OK
        assert "ok" in capsys.readouterr().out

    def test_validate_reports_line(self, config, capsys):
        path = config("[scenario]\nkind = \"standard_1d\"\nN = -4\n")
        assert cli.main(["validate-config", path]) == cli.EXIT_CONFIG
        assert f"{path}:3:" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert cli.main(["validate-config", str(tmp_path / "absent.toml")]) == cli.EXIT_IO

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "stone_erosion", "print-defaults"],
                             capture_output=True, text=True, check=True)
        assert "[scenario]" in out.stdout


class TestRun:
    def test_outputs(self, config, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", config(SHORT_RUN), "-o", str(out)]) == cli.EXIT_OK
        m = read_manifest(out / "manifest.json")
        assert m["status"] == "completed" and m["exit_code"] == 0
        assert m["final_time"] == 600.0
        listed = set(m["files"])
        assert listed == {p.name for p in out.iterdir()}
        assert {"config.toml", "fronts.csv", "snapshot_t0000000000.csv", "snapshot_t0000000300.csv",
                "snapshot_t0000000600.csv"} <= listed
        log = read_front_log(out / "fronts.csv")
        assert log.times == [0.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0]
        meta, cols = read_snapshot(out / "snapshot_t0000000600.csv")
        assert meta["t"] == 600.0 and cols["theta"].size == 21
        assert (out / "config.toml").read_text() == SHORT_RUN

    def test_deterministic(self, config, tmp_path):
        path = config(SHORT_RUN)
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", path, "-o", str(a)]) == cli.EXIT_OK
        assert cli.main(["run", path, "-o", str(b)]) == cli.EXIT_OK
        for name in read_manifest(a / "manifest.json")["files"]:
            if name != "manifest.json":
                assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_env_overrides_flag(self, config, tmp_path, monkeypatch):
        env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
        monkeypatch.setenv(cli.ENV_OUTPUT, str(env_dir))
        assert cli.main(["run", config(SHORT_RUN), "-o", str(flag_dir)]) == cli.EXIT_OK
        assert (env_dir / "manifest.json").exists()
        assert not flag_dir.exists()

    def test_config_output_dir(self, config, tmp_path):
        out = tmp_path / "from_config"
        assert cli.main(["run", config(SHORT_RUN + f'dir = "{out}"\n')]) == cli.EXIT_OK
        assert (out / "fronts.csv").exists()

    def test_law_override(self, config, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", config(SHORT_RUN), "-o", str(out), "--law", "asymmetric"]) == cli.EXIT_OK
        assert read_manifest(out / "manifest.json")["law"] == "asymmetric"

    def test_python_backend_matches(self, config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        path = config(SHORT_RUN)
        assert cli.main(["run", path, "-o", str(a), "--backend", "python"]) == cli.EXIT_OK
        assert cli.main(["run", path, "-o", str(b)]) == cli.EXIT_OK
        _, ca = read_snapshot(a / "snapshot_t0000000600.csv")
        _, cb = read_snapshot(b / "snapshot_t0000000600.csv")
        np.testing.assert_allclose(ca["theta"], cb["theta"], rtol=1e-10, atol=1e-14)

    def test_solver_failure(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["run", config(FAILING_RUN), "-o", str(out)]) == cli.EXIT_SOLVER
        m = read_manifest(out / "manifest.json")
        assert m["status"] == "solver-failure" and m["exit_code"] == cli.EXIT_SOLVER
        assert "error" in capsys.readouterr().err

    def test_unwritable_output(self, config, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["run", config(SHORT_RUN), "-o", str(blocker / "sub")]) == cli.EXIT_IO

    def test_bad_config(self, config, tmp_path):
        path = config(SHORT_RUN.replace("N = 20", "N = \"many\""))
        assert cli.main(["run", path, "-o", str(tmp_path / "out")]) == cli.EXIT_CONFIG
        assert not (tmp_path / "out").exists()


class TestStudy:
    def test_too_few_levels(self, config, tmp_path):
        code = cli.main(["study", config(SHORT_RUN), "-o", str(tmp_path / "s"), "--refinements", "2"])
        assert code == cli.EXIT_CONFIG

    def test_manufactured(self, config, tmp_path, capsys):
        out = tmp_path / "s"
        code = cli.main(["study", config(SHORT_RUN), "-o", str(out), "--manufactured", "--refinements", "3",
                         "--workers", "1"])
        assert code == cli.EXIT_OK
        rows = parse_table((out / "convergence.tsv").read_text())
        assert rows == parse_table(capsys.readouterr().out)
        assert len(rows) == 3
        for r in rows[1:]:
            assert 0.9 <= r.order_theta <= 1.1 and 0.9 <= r.order_c <= 1.1
        m = json.loads((out / "manifest.json").read_text())
        assert m["status"] == "completed" and "convergence.tsv" in m["files"]
