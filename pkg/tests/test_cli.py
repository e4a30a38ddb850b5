import csv
import json

from leo.cli import main


def run_cli(*argv):
    return main(list(argv))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestDemo:
    def test_writes_expected_csv(self, tmp_path):
        out = tmp_path / "demo"
        assert run_cli("demo", "--seed", "0", "--epochs", "5", "--out-dir", str(out)) == 0
        rows = read_csv(out / "demo_trajectories.csv")
        header, data = rows[0], rows[1:]
        assert len(data) == 261
        assert header[:5] == ["k", "u", "v", "w1", "w2"]
        assert "x1_real" in header and "e2_luen_enh" in header
        # final row has no input or process noise, but has a measurement
        last = dict(zip(header, data[-1]))
        assert last["k"] == "260" and last["u"] == "" and last["w1"] == ""
        assert last["v"] != ""

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("demo", "--seed", "3", "--epochs", "5", "--out-dir", str(a))
        run_cli("demo", "--seed", "3", "--epochs", "5", "--out-dir", str(b))
        assert (a / "demo_trajectories.csv").read_bytes() == (
            b / "demo_trajectories.csv"
        ).read_bytes()

    def test_zero_epochs_enhanced_equals_nominal(self, tmp_path):
        out = tmp_path / "demo"
        run_cli("demo", "--seed", "1", "--epochs", "0", "--out-dir", str(out))
        rows = read_csv(out / "demo_trajectories.csv")
        header = rows[0]
        idx = {name: i for i, name in enumerate(header)}
        for row in rows[1:]:
            for comp in ("x1", "x2"):
                assert row[idx[f"{comp}_open_nom"]] == row[idx[f"{comp}_open_enh"]]
                assert row[idx[f"{comp}_luen_nom"]] == row[idx[f"{comp}_luen_enh"]]


class TestTrial:
    def test_json_output_schema(self, capsys):
        assert run_cli("trial", "--dims", "2,1,1", "--seed", "7", "--epochs", "5") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["dims"] == [2, 1, 1]
        for key in (
            "e_nominal_open", "e_enhanced_open", "e_nominal_closed", "e_enhanced_closed",
        ):
            assert payload[key] >= 0

    def test_deterministic(self, capsys):
        run_cli("trial", "--dims", "2,1,1", "--seed", "7", "--epochs", "5")
        first = capsys.readouterr().out
        run_cli("trial", "--dims", "2,1,1", "--seed", "7", "--epochs", "5")
        assert capsys.readouterr().out == first

    def test_invalid_dims_usage_error(self, capsys):
        assert run_cli("trial", "--dims", "2,3,1") == 2

    def test_dump_params(self, tmp_path, capsys):
        path = tmp_path / "params.json"
        assert run_cli(
            "trial", "--dims", "2,1,1", "--seed", "1", "--epochs", "5",
            "--dump-params", str(path),
        ) == 0
        payload = json.loads(path.read_text())
        assert payload["A"]["rows"] == 2 and payload["A"]["cols"] == 2
        assert len(payload["x0"]) == 2


class TestMonteCarlo:
    def test_small_run_files_and_cardinality(self, tmp_path, capsys):
        out = tmp_path / "mc"
        assert run_cli(
            "montecarlo", "--dims", "2,1,1", "--trials", "10", "--seed", "1",
            "--epochs", "5", "--out-dir", str(out),
        ) == 0
        rows = read_csv(out / "trials.csv")
        assert len(rows) == 11  # header + 10 trials
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["summaries"]) == 1
        assert summary["summaries"][0]["trials"] == 10
        assert summary["config"]["master_seed"] == 1
        assert "version" in summary

    def test_too_few_trials_rejected(self, tmp_path):
        assert run_cli(
            "montecarlo", "--dims", "2,1,1", "--trials", "5", "--out-dir", str(tmp_path)
        ) == 2

    def test_json_format(self, tmp_path):
        out = tmp_path / "mc"
        assert run_cli(
            "montecarlo", "--dims", "2,1,1", "--trials", "10", "--seed", "2",
            "--epochs", "3", "--format", "json", "--out-dir", str(out),
        ) == 0
        trials = json.loads((out / "trials.json").read_text())
        assert len(trials) == 10

    def test_multiple_dims(self, tmp_path):
        out = tmp_path / "mc"
        assert run_cli(
            "montecarlo", "--dims", "2,1,1;3,2,1", "--trials", "10", "--seed", "3",
            "--epochs", "3", "--out-dir", str(out),
        ) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [s["dims"] for s in summary["summaries"]] == [[2, 1, 1], [3, 2, 1]]

    def test_default_dims_is_the_full_grid(self, tmp_path):
        out = tmp_path / "mc"
        assert run_cli(
            "montecarlo", "--trials", "10", "--seed", "4", "--epochs", "1",
            "--out-dir", str(out),
        ) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["summaries"]) == 15
        rows = read_csv(out / "trials.csv")
        assert len(rows) == 1 + 15 * 10


class TestTheoryCheck:
    def test_default_passes(self, capsys):
        assert run_cli("theory-check", "--cases", "30", "--seed", "3") == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 4

    def test_deterministic(self, capsys):
        run_cli("theory-check", "--cases", "25", "--seed", "9")
        first = capsys.readouterr().out
        run_cli("theory-check", "--cases", "25", "--seed", "9")
        assert capsys.readouterr().out == first

    def test_injected_fault_fails(self, capsys):
        assert run_cli("theory-check", "--cases", "10", "--inject-fault") == 1
        assert "FAIL" in capsys.readouterr().out


class TestConfigFile:
    def test_config_supplies_values(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\nepochs = 5\ndims = 2,1,1\n")
        run_cli("trial", "--config", str(cfg))
        via_config = json.loads(capsys.readouterr().out)
        run_cli("trial", "--dims", "2,1,1", "--seed", "7", "--epochs", "5")
        via_flags = json.loads(capsys.readouterr().out)
        assert via_config == via_flags

    def test_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\nepochs = 5\ndims = 2,1,1\n")
        run_cli("trial", "--config", str(cfg), "--seed", "8")
        with_flag = json.loads(capsys.readouterr().out)
        assert with_flag["seed"] == 8

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("learning_rate = 0.1\n")
        assert run_cli("trial", "--config", str(cfg)) == 2

    def test_comments_and_blanks_ignored(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# a comment\n\nseed = 4  # trailing\nepochs = 3\n")
        assert run_cli("trial", "--dims", "2,1,1", "--config", str(cfg)) == 0

    def test_env_seed_fallback(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LEO_SEED", "11")
        run_cli("trial", "--dims", "2,1,1", "--epochs", "3")
        payload = json.loads(capsys.readouterr().out)
        assert payload["seed"] == 11
