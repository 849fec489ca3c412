import filecmp
import json
import os

import pytest

from sggn.cli import main
from sggn.config import ConfigError, ExperimentConfig, load_config, parse_config

SMALL_KURAMOTO = ["data.nodes=3", "data.steps=500", "data.window=6"]
SMALL_TRAIN = ["train.epochs=2", "train.hidden=3", "train.horizon=3"]
SMALL_CHANNEL = ["data.task=channel", "data.stations=3", "data.length=500",
                 "train.sub_window=36", "train.n_kernels=1"]


def run(command, out, sets=(), extra=()):
    """Run one command with its artifacts under ``out``.

    The directory comes from the output-root variable rather than a flag, so
    the echoed config is identical across reruns into different roots.
    """
    argv = [command, "--seed", "7"]
    for s in sets:
        argv += ["--set", s]
    os.environ["SGGN_OUTPUT_ROOT"] = str(out)
    try:
        return main(argv + list(extra))
    finally:
        del os.environ["SGGN_OUTPUT_ROOT"]


def tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def assert_identical(a, b):
    files = tree(a)
    assert files == tree(b) and files
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors


@pytest.fixture(scope="module")
def kuramoto_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "data_run"
    assert run("simulate", out, SMALL_KURAMOTO) == 0
    return out / "simulate" / "data"


@pytest.fixture(scope="module")
def channel_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("simc") / "run"
    assert run("simulate", out, SMALL_CHANNEL) == 0
    return out / "simulate" / "data"


def test_config_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(cfg.to_ini()) == cfg
    tweaked = cfg.with_updates({"train.eps_scale": "0.30000000000000004", "theory.eps_ladder": "0.3,0.2,0.1,0.05",
                                "train.spectra": "yes", "run.seed": "12"})
    assert parse_config(tweaked.to_ini()) == tweaked
    assert tweaked.train.eps_scale == 0.30000000000000004
    assert tweaked.theory.eps_ladder == (0.3, 0.2, 0.1, 0.05)


def test_config_rejects_unknown_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("[train]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[nowhere]\nseed = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[train]\nepochs = many\n")
    with pytest.raises(ConfigError):
        parse_config("[train]\nspectra = maybe\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SGGN_OUTPUT_ROOT", str(tmp_path))
    assert ExperimentConfig().output_dir("train") == os.path.join(str(tmp_path), "train")


def test_flags_override_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\nnodes = 3\nsteps = 500\nwindow = 6\n[run]\nseed = 1\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(ini), "--seed", "4", "--output", str(out),
                 "--set", "data.nodes=4"]) == 0
    echoed = load_config(out / "config.ini")
    assert echoed.seed == 4 and echoed.data.nodes == 4 and echoed.data.steps == 500


def test_simulate_deterministic_and_creates_dirs(tmp_path):
    a, b = tmp_path / "deep" / "a", tmp_path / "deep" / "b"
    assert run("simulate", a, SMALL_KURAMOTO) == 0
    assert run("simulate", b, SMALL_KURAMOTO) == 0
    assert_identical(a, b)
    manifest = json.loads((a / "simulate" / "data" / "manifest.json").read_text())
    assert manifest["task"] == "kuramoto" and manifest["window"] == 6


def test_simulate_size_guard(tmp_path, capsys):
    assert run("simulate", tmp_path / "x", ["data.steps=100"]) == 2
    assert "window" in capsys.readouterr().err


def test_exit_codes_for_bad_input(tmp_path, capsys):
    assert run("simulate", tmp_path / "x", ["data.bogus=1"]) == 2
    assert run("train", tmp_path / "y", ["train.dataset=" + str(tmp_path / "none")]) == 2
    assert run("train", tmp_path / "y", []) == 2
    assert run("verify", tmp_path / "z", ["theory.eps_ladder=0.1"]) == 2
    assert main(["simulate", "--threads", "0"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("simulate", blocker, SMALL_KURAMOTO) == 3


def test_train_deterministic_and_noise_off_equivalence(tmp_path, kuramoto_data):
    sets = SMALL_TRAIN + ["train.dataset=" + str(kuramoto_data)]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", a, sets) == 0
    assert run("train", b, sets) == 0
    assert_identical(a, b)
    assert {"history.csv", "checkpoint.json", "metrics.json", "config.ini"} <= set(tree(a / "train"))
    g, s = tmp_path / "ggn", tmp_path / "sggn0"
    assert run("train", g, sets + ["train.mode=GGN"]) == 0
    assert run("train", s, sets + ["train.mode=S-GGN", "train.eps_scale=0"]) == 0
    for name in ("metrics.json", "history.csv", "checkpoint.json"):
        assert (g / "train" / name).read_bytes() == (s / "train" / name).read_bytes()


def test_train_divergence_exit_code(tmp_path, kuramoto_data):
    sets = SMALL_TRAIN + ["train.dataset=" + str(kuramoto_data), "train.divergence_factor=1e-12"]
    out = tmp_path / "div"
    assert run("train", out, sets) == 4
    assert (out / "train" / "history.csv").read_text().count("\n") == 2


def test_train_spectra_captures_forced_epochs(tmp_path, kuramoto_data):
    sets = ["train.dataset=" + str(kuramoto_data), "train.epochs=3", "train.hidden=3",
            "train.horizon=3", "train.spectra=true", "spectral.every=2", "spectral.windows=4"]
    out = tmp_path / "sp"
    assert run("train", out, sets) == 0
    rows = (out / "train" / "spectrum_sggn.csv").read_text().splitlines()[1:]
    assert sorted({int(r.split(",")[0]) for r in rows}) == [0, 1, 2]
    summary = json.loads((out / "train" / "spectral_summary.json").read_text())
    assert summary["S-GGN"]["epochs"] == [0, 1, 2]


def test_spectra_command_deterministic(tmp_path, kuramoto_data):
    sets = ["train.dataset=" + str(kuramoto_data), "train.epochs=2", "train.hidden=3",
            "train.horizon=3", "spectral.every=1", "spectral.windows=3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("spectra", a, sets) == 0
    assert run("spectra", b, sets) == 0
    assert_identical(a, b)
    summary = json.loads((a / "spectra" / "spectral_summary.json").read_text())
    assert set(summary) == {"GGN", "S-GGN"}


def test_verify_pure_noise_and_determinism(tmp_path):
    sets = ["theory.pairs=4000"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("verify", a, sets) == 0
    assert run("verify", b, sets) == 0
    assert_identical(a, b)
    rep = json.loads((a / "verify" / "expansion_report.json").read_text())
    assert rep["status"] == "pass"
    assert json.loads((a / "verify" / "delta_bound.json").read_text())["passed"]


def test_verify_scalar_quadratic_drift(tmp_path):
    out = tmp_path / "v"
    assert run("verify", out, ["theory.system=scalar-quadratic-drift"]) == 0
    rep = json.loads((out / "verify" / "expansion_report.json").read_text())
    assert rep["slope"] >= 2.7


def _trained_pair(tmp_path, data, sets):
    sets = sets + ["train.dataset=" + str(data)]
    for mode, name in (("GGN", "g"), ("S-GGN", "s")):
        assert run("train", tmp_path / name, sets + ["train.mode=" + mode]) == 0
    return ["train.dataset=" + str(data), "predict.ggn_checkpoint=" + str(tmp_path / "g" / "train" / "checkpoint.json"),
            "predict.sggn_checkpoint=" + str(tmp_path / "s" / "train" / "checkpoint.json")]


def test_predict_outputs_and_determinism(tmp_path, kuramoto_data):
    sets = _trained_pair(tmp_path, kuramoto_data, SMALL_TRAIN)
    a, b = tmp_path / "pa", tmp_path / "pb"
    assert run("predict", a, sets + ["predict.horizon=4"]) == 0
    assert run("predict", b, sets + ["predict.horizon=4"]) == 0
    assert_identical(a, b)
    lines = (a / "predict" / "predict_node00.csv").read_text().splitlines()
    assert lines[0] == ("t,truth_sin_theta,ggn_pred_sin_theta,sggn_pred_sin_theta,"
                        "truth_dtheta,ggn_pred_dtheta,sggn_pred_dtheta")
    assert len(lines) == 5
    empty = tmp_path / "p0"
    assert run("predict", empty, sets + ["predict.horizon=0"]) == 0
    assert (empty / "predict" / "predict_node02.csv").read_text().splitlines() == [lines[0]]
    assert run("predict", tmp_path / "bad", sets + ["predict.horizon=10000"]) == 2


def test_predict_checkpoint_mismatch(tmp_path, kuramoto_data):
    sets = _trained_pair(tmp_path, kuramoto_data, SMALL_TRAIN)
    other = tmp_path / "other"
    assert run("simulate", other, ["data.nodes=4", "data.steps=500", "data.window=6"]) == 0
    sets[0] = "train.dataset=" + str(other / "simulate" / "data")
    assert run("predict", tmp_path / "mm", sets) == 2


def test_channel_predict_has_real_and_imag_columns(tmp_path, channel_data):
    sets = _trained_pair(tmp_path, channel_data, ["train.epochs=1", "train.hidden=3", "train.horizon=2"]
                         + SMALL_CHANNEL)
    out = tmp_path / "pc"
    assert run("predict", out, sets + SMALL_CHANNEL + ["predict.horizon=2"]) == 0
    out = out / "predict"
    files = sorted(f for f in os.listdir(out) if f.startswith("predict_node"))
    assert len(files) == 3
    header = (out / files[0]).read_text().splitlines()[0].split(",")
    truth_cols = [h for h in header if h.startswith("truth_")]
    assert truth_cols == ["truth_re", "truth_im"]
    assert len(files) * len(truth_cols) == 2 * 3
    manifest = json.loads((channel_data / "manifest.json").read_text())
    assert manifest["window"] == 72 and manifest["history"] is True
