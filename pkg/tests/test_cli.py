import json

import numpy as np
import pytest

import src.cli as cli
import src.workflows.dhff_workflow as dhff_workflow
from src.analytics.detect import ChangeMap
from src.cli import main
from src.imaging.pnm import load_pnm, save_pnm
from src.imaging.synthgen import gen_pair, write_pair
from src.network.vggnet import random_base_weights
from src.network.weights_io import load_weights


@pytest.fixture(autouse=True)
def quiet_env(monkeypatch):
    monkeypatch.setenv("DHFF_VERBOSE", "0")


@pytest.fixture
def narrow_loader(monkeypatch, narrow_weights):
    """Weight files must follow the full plan; swap in the narrow net for speed."""
    monkeypatch.setattr(cli, "_read_weights", lambda path: narrow_weights)
    monkeypatch.setattr(dhff_workflow, "random_base_weights", lambda seed: narrow_weights)
    return narrow_weights


@pytest.fixture
def quick_cfg(tmp_path):
    path = tmp_path / "quick.cfg"
    path.write_text("max_outer_iters = 0\nlbfgs_max_inner_iters = 2\n", encoding="utf-8")
    return str(path)


def _save_map(bits, path):
    save_pnm(ChangeMap.from_bits(np.asarray(bits, dtype=bool)).to_image(), path)
    return str(path)


# ---------- synth ----------


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "3", "--size", "32", "--out", str(tmp_path / name)]) == 0
    for filename in ("opt.ppm", "sar.pgm", "truth.pgm"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()


def test_synth_downscale(tmp_path):
    assert main(["synth", "--size", "64", "--sar-downscale", "2", "--out", str(tmp_path)]) == 0
    assert load_pnm(tmp_path / "sar.pgm").shape == (32, 32, 1)


def test_synth_too_small(tmp_path, capsys):
    assert main(["synth", "--size", "16", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_synth_bad_downscale_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--sar-downscale", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2


# ---------- evaluate ----------


def test_evaluate_perfect_and_all_change(tmp_path, capsys):
    half = np.arange(100).reshape(10, 10) < 50
    truth = _save_map(half, tmp_path / "truth.pgm")
    everything = _save_map(np.ones((10, 10)), tmp_path / "all.pgm")

    assert main(["evaluate", "--pred", truth, "--truth", truth]) == 0
    assert capsys.readouterr().out.strip() == "100.00,100.00,100.00,100.00"

    assert main(["evaluate", "--pred", everything, "--truth", truth]) == 0
    assert capsys.readouterr().out.strip() == "50.00,50.00,100.00,0.00"

    assert main(["evaluate", "--pred", everything, "--truth", truth, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["Pe"] == 0.5


def test_evaluate_size_mismatch(tmp_path, capsys):
    a = _save_map(np.zeros((4, 4)), tmp_path / "a.pgm")
    b = _save_map(np.zeros((5, 5)), tmp_path / "b.pgm")
    assert main(["evaluate", "--pred", a, "--truth", b]) == 1
    assert "error:" in capsys.readouterr().err


def test_evaluate_missing_file(tmp_path, capsys):
    a = _save_map(np.zeros((4, 4)), tmp_path / "a.pgm")
    missing = str(tmp_path / "nope.pgm")
    assert main(["evaluate", "--pred", a, "--truth", missing]) == 1
    assert missing in capsys.readouterr().err


# ---------- detect ----------


def test_detect_identical_pair_is_all_zero(tmp_path, opt_image):
    save_pnm(opt_image, tmp_path / "opt.ppm")
    out = tmp_path / "change.pgm"
    assert main(["detect", "--pre", str(tmp_path / "opt.ppm"), "--post", str(tmp_path / "opt.ppm"),
                 "--method", "otsu", "--out", str(out)]) == 0
    assert not load_pnm(out).data.any()


def test_detect_unknown_method_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--pre", "a.ppm", "--post", "b.ppm", "--method", "kmeans", "--out", str(tmp_path / "c.pgm")])
    assert exc.value.code == 2


def test_detect_ocsvm_writes_model(tmp_path, opt_image, make_image, capsys):
    save_pnm(opt_image, tmp_path / "pre.ppm")
    save_pnm(make_image(6), tmp_path / "post.ppm")
    mask = np.zeros((32, 32), dtype=bool)
    mask[:10] = True
    train = _save_map(mask, tmp_path / "train.pgm")
    model_path = tmp_path / "model.json"

    code = main([
        "detect", "--pre", str(tmp_path / "pre.ppm"), "--post", str(tmp_path / "post.ppm"),
        "--method", "ocsvm", "--train-mask", train, "--nu", "0.2",
        "--model", str(model_path), "--out", str(tmp_path / "change.pgm"),
    ])
    assert code == 0
    model = json.loads(model_path.read_text(encoding="utf-8"))
    assert model["nu"] == 0.2
    assert model["n_train"] == 320
    assert load_pnm(tmp_path / "change.pgm").shape == (32, 32, 1)
    assert "notice" not in capsys.readouterr().out


# ---------- transform ----------


def test_transform_missing_weights(tmp_path, opt_image, sar_image, capsys):
    save_pnm(opt_image, tmp_path / "opt.ppm")
    save_pnm(sar_image, tmp_path / "sar.pgm")
    missing = str(tmp_path / "w.bin")
    code = main(["transform", "--optical", str(tmp_path / "opt.ppm"), "--sar", str(tmp_path / "sar.pgm"),
                 "--weights", missing, "--out", str(tmp_path / "t2.ppm")])
    assert code == 1
    err = capsys.readouterr().err
    assert "weights file not found" in err and missing in err


def test_transform_malformed_weights(tmp_path, opt_image, sar_image, capsys):
    save_pnm(opt_image, tmp_path / "opt.ppm")
    save_pnm(sar_image, tmp_path / "sar.pgm")
    (tmp_path / "w.bin").write_bytes(b"not weights")
    code = main(["transform", "--optical", str(tmp_path / "opt.ppm"), "--sar", str(tmp_path / "sar.pgm"),
                 "--weights", str(tmp_path / "w.bin"), "--out", str(tmp_path / "t2.ppm")])
    assert code == 1
    assert "malformed" in capsys.readouterr().err


def test_transform_writes_outputs(tmp_path, opt_image, sar_image, narrow_loader, quick_cfg, capsys):
    save_pnm(opt_image, tmp_path / "opt.ppm")
    save_pnm(sar_image, tmp_path / "sar.pgm")
    code = main([
        "transform", "--optical", str(tmp_path / "opt.ppm"), "--sar", str(tmp_path / "sar.pgm"),
        "--weights", "unused.bin", "--config", quick_cfg,
        "--out", str(tmp_path / "t2.ppm"), "--trace", str(tmp_path / "trace.jsonl"),
        "--snapshot-dir", str(tmp_path / "snaps"),
    ])
    assert code == 0
    assert load_pnm(tmp_path / "t2.ppm").shape == (32, 32, 3)
    lines = (tmp_path / "trace.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["k"] == 0
    assert sorted(p.name for p in (tmp_path / "snaps").iterdir()) == ["t2_k0.ppm"]
    assert "stop_reason=single_stage" in capsys.readouterr().out


def test_transform_bad_config(tmp_path, opt_image, sar_image, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda_c = 3\n", encoding="utf-8")
    save_pnm(opt_image, tmp_path / "opt.ppm")
    save_pnm(sar_image, tmp_path / "sar.pgm")
    code = main(["transform", "--optical", str(tmp_path / "opt.ppm"), "--sar", str(tmp_path / "sar.pgm"),
                 "--weights", "w.bin", "--config", str(cfg), "--out", str(tmp_path / "t2.ppm")])
    assert code == 1
    assert "lambda_c" in capsys.readouterr().err


# ---------- run / compare ----------


def test_run_on_synthetic_pair(tmp_path, narrow_loader, quick_cfg, capsys):
    out = tmp_path / "results"
    code = main(["run", "--size", "32", "--config", quick_cfg, "--out", str(out), "--no-plots"])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert len(line.split(",")) == 4
    for name in ("t2.ppm", "change.pgm", "trace.jsonl", "error_map.ppm", "metrics.json"):
        assert (out / name).is_file()


def test_run_reads_each_input_once(tmp_path, narrow_loader, quick_cfg, monkeypatch):
    opt, sar, truth = (str(p) for p in write_pair(tmp_path, *gen_pair(3, 32)))
    reads = []

    def counting_load(path):
        reads.append(str(path))
        return load_pnm(path)

    def no_reload(path):
        raise AssertionError(f"graph re-read {path}")

    monkeypatch.setattr(cli, "load_pnm", counting_load)
    monkeypatch.setattr(dhff_workflow, "load_pnm", no_reload)
    code = main(["run", "--optical", opt, "--sar", sar, "--truth", truth, "--config", quick_cfg,
                 "--out", str(tmp_path / "out"), "--no-plots"])
    assert code == 0
    assert sorted(reads) == sorted([opt, sar, truth])


def test_run_needs_both_images(tmp_path, capsys):
    code = main(["run", "--optical", "opt.ppm", "--out", str(tmp_path)])
    assert code == 1
    assert "--sar" in capsys.readouterr().err


def test_compare_table(tmp_path, narrow_loader, quick_cfg, capsys):
    code = main([
        "compare", "--size", "32", "--config", quick_cfg, "--weights", "unused.bin",
        "--out", str(tmp_path), "--no-plots",
    ])
    assert code == 0
    out = capsys.readouterr().out
    for variant in ("OTSU_O", "OCSVM_O", "HFF", "DHFF"):
        assert variant in out
    assert (tmp_path / "comparison.csv").is_file()


@pytest.mark.slow
def test_init_weights_round_trip(tmp_path):
    path = tmp_path / "w.bin"
    assert main(["init-weights", "--seed", "0", "--out", str(path)]) == 0
    loaded = load_weights(path)
    reference = random_base_weights(0)
    assert np.array_equal(loaded.layers[0].kernel, reference.layers[0].kernel.astype(np.float32))
    assert len(loaded.layers) == 16
