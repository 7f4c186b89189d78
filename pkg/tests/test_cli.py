import csv
import json
import os

import numpy as np
import pytest

from exfil_lab.cli import main
from exfil_lab.harness import strip_timings
from exfil_lab.weights_io import read_archive

FAST = """
[run]
seeds = 0
[data]
n_train = 64
n_test = 64
[model]
epochs = {model_epochs}
batch_size = 8
[attack]
kind = {kind}
epochs = 3
num_targets = 8
n = {n}
latent_dim = {latent_dim}
[mitigation]
method = {method}
epochs = {mit_epochs}
[eval]
source = {source}
usability_epochs = 3
[ablate]
epochs = 1
eta_high = {eta_high}
"""


def write_cfg(tmp_path, name="cfg.ini", **kw):
    values = dict(model_epochs=2, kind="transpose", n=4, latent_dim=64, method="lwlrd_ft", mit_epochs=1,
                  source="mitigated", eta_high="1e-2")
    values.update(kw)
    path = tmp_path / name
    path.write_text(FAST.format(**values))
    return str(path)


def run(verb, cfg, out):
    return main([verb, "--config", cfg, "--out", str(out), "--quiet"])


def report(out, verb):
    with open(os.path.join(out, f"{verb.replace('-', '_')}_report.json")) as fh:
        return json.load(fh)


@pytest.fixture
def out(tmp_path):
    return tmp_path / "run"


def test_full_transpose_pipeline(tmp_path, out):
    cfg = write_cfg(tmp_path)
    for verb in ("gen-data", "attack", "mitigate", "extract", "eval", "usability", "ablate"):
        assert run(verb, cfg, out) == 0, verb
    rep = report(out, "extract")
    assert rep["format_version"] == 1 and rep["config"]["attack"]["kind"] == "transpose"
    assert rep["ssim"]["window"] == 7
    assert {"ssim_mean", "ssim_median", "psnr_mean"} <= set(rep["aggregate"]["leakage"])
    assert os.path.isfile(out / "seed0" / "recon.mds")
    with open(out / "ablate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 1 * 2  # decays x seeds x (epoch 0 and 1)
    assert {r["decay"] for r in rows} == {"exponential", "linear"}


def test_extract_matches_attack(tmp_path, out):
    cfg = write_cfg(tmp_path, source="attacked")
    for verb in ("gen-data", "attack", "extract"):
        assert run(verb, cfg, out) == 0
    a = report(out, "attack")["seeds"]["0"]["leakage"]
    e = report(out, "extract")["seeds"]["0"]["leakage"]
    assert a == e


def test_dec_pipeline(tmp_path, out):
    cfg = write_cfg(tmp_path, kind="dec", method="vanilla_ft", n=16)
    for verb in ("gen-data", "train", "attack", "mitigate", "extract"):
        assert run(verb, cfg, out) == 0, verb
    assert report(out, "attack")["seeds"]["0"]["leakage"]["ber"] == 0.0
    assert report(out, "extract")["seeds"]["0"]["leakage"]["ber"] > 0.3


def test_extract_on_clean_model_is_noise(tmp_path, out):
    cfg = write_cfg(tmp_path, kind="dec", source="model")
    for verb in ("gen-data", "train", "attack", "extract"):
        assert run(verb, cfg, out) == 0
    seed = report(out, "extract")["seeds"]["0"]
    assert 0.4 <= seed["leakage"]["ber"] <= 0.6
    assert abs(seed["leakage"]["ssim_mean"]) < 0.1


def test_train_determinism_and_untrained_flag(tmp_path, out):
    cfg = write_cfg(tmp_path)
    assert run("gen-data", cfg, out) == 0
    assert run("train", cfg, out) == 0
    first = strip_timings(report(out, "train"))
    assert run("train", cfg, out) == 0
    assert strip_timings(report(out, "train")) == first
    cfg0 = write_cfg(tmp_path, "zero.ini", model_epochs=0)
    assert run("train", cfg0, out) == 0
    seed = report(out, "train")["seeds"]["0"]
    assert seed["untrained"] is True
    assert abs(seed["utility"]["accuracy"] - 1 / 8) < 0.15


def test_vanilla_zero_epochs_byte_identical(tmp_path, out):
    cfg = write_cfg(tmp_path, method="vanilla_ft", mit_epochs=0)
    for verb in ("gen-data", "attack", "mitigate"):
        assert run(verb, cfg, out) == 0
    a = (out / "seed0" / "attacked.mwt").read_bytes()
    assert a == (out / "seed0" / "mitigated.mwt").read_bytes()


def test_seed_flag_overrides(tmp_path, out):
    cfg = write_cfg(tmp_path)
    assert main(["gen-data", "--config", cfg, "--out", str(out), "--seed", "9", "--quiet"]) == 0
    assert os.path.isdir(out / "seed9") and not os.path.isdir(out / "seed0")


class TestExitCodes:
    def test_config_error(self, tmp_path, out):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\nepochs = lots\n")
        assert run("train", str(bad), out) == 2

    def test_unknown_verb(self):
        assert main(["fly"]) == 2

    def test_missing_input_is_io(self, tmp_path, out, capsys):
        assert run("train", write_cfg(tmp_path), out) == 3
        assert "gen-data" in capsys.readouterr().err

    def test_corrupt_model_is_io(self, tmp_path, out):
        cfg = write_cfg(tmp_path, source="model")
        assert run("gen-data", cfg, out) == 0
        (out / "seed0" / "model.mwt").write_bytes(b"MWT1\x02\x00\x00\x00")
        assert run("eval", cfg, out) == 3

    def test_capacity_error(self, tmp_path, out, capsys):
        cfg = write_cfg(tmp_path, kind="dec", n=200, latent_dim=256)
        text = open(cfg).read().replace("n_train = 64", "n_train = 256")
        open(cfg, "w").write(text)
        for verb in ("gen-data", "train"):
            assert run(verb, cfg, out) == 0
        assert run("attack", cfg, out) == 5
        assert "D=256" in capsys.readouterr().err

    def test_numeric_error(self, tmp_path, out):
        cfg = write_cfg(tmp_path, method="vanilla_ft")
        text = open(cfg).read().replace("[mitigation]\n", "[mitigation]\neta = 1e200\noptimizer = sgd\nsource = model\n")
        open(cfg, "w").write(text)
        for verb in ("gen-data", "train"):
            assert run(verb, cfg, out) == 0
        assert run("mitigate", cfg, out) == 4

    def test_single_class_usability(self, tmp_path, out):
        from exfil_lab.data import Dataset, save_dataset

        cfg = write_cfg(tmp_path)
        assert run("gen-data", cfg, out) == 0
        save_dataset(Dataset(np.zeros((4, 16, 16)), [1, 1, 1, 1], 8), out / "seed0" / "recon.mds")
        assert run("usability", cfg, out) == 4

    def test_zero_eta_high_in_sweep(self, tmp_path, out):
        assert run("ablate", write_cfg(tmp_path, eta_high="0"), out) == 2
