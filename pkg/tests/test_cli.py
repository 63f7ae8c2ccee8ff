import configparser

import numpy as np
import pytest

from ppann import cli, pann


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert _run("gen", "--study", "I", "--case", "A", "--out", root / "data") == 0
    assert _run("train", "--arch", "Type1", "--data", root / "data", "--epochs", 10,
                "--restarts", 2, "--out", root / "train") == 0
    return root


def test_gen_writes_expected_rows(trained):
    lines = (trained / "data" / "calib.csv").read_text().splitlines()
    assert len(lines) == 1818 + 1
    assert sum(1 for _ in open(trained / "data" / "test.csv")) == 19695 + 1


def test_gen_is_byte_identical_on_rerun(trained, tmp_path):
    assert _run("gen", "--study", "I", "--case", "A", "--out", tmp_path) == 0
    for name in ("calib.csv", "test.csv"):
        assert (tmp_path / name).read_bytes() == (trained / "data" / name).read_bytes()


def test_gen_vector_study(tmp_path):
    assert _run("gen", "--study", "vector", "--out", tmp_path) == 0
    assert len((tmp_path / "calib.csv").read_text().splitlines()) == 2727 + 1
    assert len((tmp_path / "test.csv").read_text().splitlines()) == 20200 + 1


def test_train_outputs(trained):
    d = trained / "train"
    for name in ("report.txt", "loss.csv", "timing.txt", "model.txt", "model_r0.txt",
                 "model_r1.txt", "config.ini"):
        assert (d / name).exists(), name
    report = (d / "report.txt").read_text()
    assert "restart.1.excluded" in report and "wall_time" not in report
    assert len((d / "loss.csv").read_text().splitlines()) == 11


def test_eval_outputs_one_row_per_distinct_t(trained, tmp_path):
    assert _run("eval", "--model", trained / "train" / "model.txt", "--data", trained / "data",
                "--out", tmp_path) == 0
    rows = (tmp_path / "per_t_mse.csv").read_text().splitlines()
    assert len(rows) == 1 + 195
    assert "test.log10_mse" in (tmp_path / "metrics.txt").read_text()
    paths = (tmp_path / "stress_paths_test.csv").read_text().splitlines()
    assert len(paths) == 1 + 19695 and paths[1].startswith("mixed,")


def test_verify_exit_codes(trained, tmp_path):
    model = trained / "train" / "model.txt"
    assert _run("verify", "--model", model, "--samples", 16, "--out", tmp_path / "ok") == 0
    assert "suite.passed = True" in (tmp_path / "ok" / "verify.txt").read_text()
    assert _run("verify", "--model", model, "--samples", 16, "--ablate-normalisation",
                "--out", tmp_path / "bad") == cli.EXIT_VERIFY
    assert _run("verify", "--model", tmp_path / "missing.txt", "--out", tmp_path) == cli.EXIT_IO


@pytest.mark.parametrize("argv", [
    ["train", "--arch", "Type9", "--epochs", "1"],
    ["train", "--epochs", "0"],
    ["gen", "--study", "III"],
    ["frobnicate"],
    ["train", "--epochs", "ten"],
    [],
])
def test_usage_errors(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv and argv[0] != "frobnicate" else argv) \
        == cli.EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nseed = 7\n[gen]\nstudy = II\ncase = B\n")
    out = tmp_path / "o"
    assert _run("gen", "--config", ini, "--case", "C", "--out", out) == 0
    cp = configparser.ConfigParser()
    cp.read(out / "config.ini")
    assert cp["gen"]["seed"] == "7" and cp["gen"]["study"] == "II" and cp["gen"]["case"] == "C"
    assert len((out / "calib.csv").read_text().splitlines()) == 1212 + 1


def test_bad_config_key_is_usage_error(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[gen]\ncolour = blue\n")
    assert _run("gen", "--config", ini, "--out", tmp_path) == cli.EXIT_USAGE


def test_missing_data_dir_is_io_error(tmp_path):
    assert _run("train", "--data", tmp_path / "nope", "--epochs", 1, "--out", tmp_path) == cli.EXIT_IO


def test_numerical_failure_exit_code(trained, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for name in ("calib.csv", "test.csv"):
        text = (trained / "data" / name).read_text().splitlines()
        if name == "calib.csv":
            cells = text[1].split(",")
            cells[-3] = "nan"
            text[1] = ",".join(cells)
        (data / name).write_text("\n".join(text) + "\n")
    code = _run("train", "--data", data, "--epochs", 2, "--restarts", 1, "--out", tmp_path / "o")
    assert code == cli.EXIT_NUMERICAL


def test_iso_curve_spread_of_parameter_free_model_is_zero():
    # equal mu gives the same solved F, and the growth-only model ignores t
    assert cli.iso_curve_spread(pann.zero_model("Type1M", 2)) <= 1e-12
