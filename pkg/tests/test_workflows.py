import json
import os

from src.config import RunConfig
from src.imaging.synthgen import gen_pair
from src.workflows.comparison_workflow import route_after_variants, route_start, run_comparison
from src.workflows.dhff_workflow import route_after_detect, run_dhff
from src.workflows.iist_constants import VARIANT_APPENDIX, VARIANT_SWEEP


def _quick_run_config(quick_config, **changes):
    return RunConfig(iist=quick_config.with_overrides(max_outer_iters=1, **changes))


def test_dhff_run_writes_everything(tmp_path, narrow_weights, quick_config):
    out_dir = tmp_path / "out"
    plots_dir = tmp_path / "plots"
    state = run_dhff(
        run_config=_quick_run_config(quick_config, snapshot_stages=frozenset({0, 1})),
        weights=narrow_weights,
        synth_size=32,
        out_dir=str(out_dir),
        plots_dir=str(plots_dir),
    )

    assert state["t2"].shape == (32, 32, 3)
    assert state["metrics"] is not None
    for key in ("t2", "change_map", "trace", "error_map", "metrics", "snapshot_k0", "snapshot_k1",
                "plot_trace", "plot_snapshots", "plot_error_map"):
        assert os.path.isfile(state["outputs"][key]), key

    with open(state["outputs"]["metrics"], encoding="utf-8") as fh:
        assert set(json.load(fh)) == {"Ra", "Rp", "Rr", "Ka", "Pe"}

    nodes = [note.split(":")[0] for note in state["notes"]]
    for node in ("load_inputs", "transform", "detect", "evaluate", "write_outputs", "generate_plots"):
        assert node in nodes


def test_dhff_run_without_truth_skips_evaluation(tmp_path, narrow_weights, quick_config, opt_image, sar_image):
    from src.imaging.pnm import save_pnm

    save_pnm(opt_image, tmp_path / "opt.ppm")
    save_pnm(sar_image, tmp_path / "sar.pgm")
    state = run_dhff(
        run_config=_quick_run_config(quick_config),
        weights=narrow_weights,
        opt_path=str(tmp_path / "opt.ppm"),
        sar_path=str(tmp_path / "sar.pgm"),
        out_dir=str(tmp_path / "out"),
        make_plots=False,
    )
    assert state.get("metrics") is None
    assert "error_map" not in state["outputs"]
    assert os.path.isfile(state["outputs"]["change_map"])
    assert not any(note.startswith("evaluate") for note in state["notes"])


def test_dhff_run_without_out_dir(narrow_weights, quick_config):
    state = run_dhff(run_config=_quick_run_config(quick_config), weights=narrow_weights, synth_size=32, make_plots=False)
    assert any("no out_dir" in note for note in state["notes"])


def test_route_after_detect():
    assert route_after_detect({"truth": None}) == "skip"
    assert route_after_detect({"truth": object()}) == "evaluate"


def test_comparison_routing():
    assert route_start({}) == "baselines"
    assert route_start({"include_baselines": False}) == "transfer_variants"
    assert route_after_variants({}) == "build_table"
    assert route_after_variants({"include_sweep": True}) == "lambda_sweep"
    assert route_after_variants({"include_appendix": True, "include_sweep": True}) == "appendix"


def test_comparison_table(tmp_path, narrow_weights, quick_config):
    opt, sar, truth = gen_pair(3, 32)
    state = run_comparison(
        run_config=RunConfig(iist=quick_config.with_overrides(max_outer_iters=0)),
        opt_image=opt,
        sar_image=sar,
        truth=truth,
        weights=narrow_weights,
        include_sweep=True,
        lambdas=[0.01, 0.2],
        out_dir=str(tmp_path),
        plots_dir=str(tmp_path / "plots"),
    )
    table = state["table"]
    assert table["variant"].tolist() == ["OTSU_O", "OCSVM_O", "HFF", "DHFF", VARIANT_SWEEP, VARIANT_SWEEP]
    assert table.loc[table["variant"] == VARIANT_SWEEP, "lambda_c"].tolist() == [0.01, 0.2]
    assert table["Ra"].between(0.0, 100.0).all()
    assert os.path.isfile(state["outputs"]["comparison_csv"])
    assert os.path.isfile(state["outputs"]["plot_comparison"])
    assert os.path.isfile(state["outputs"]["plot_lambda_sweep"])


def test_comparison_appendix_grid(narrow_weights, quick_config):
    state = run_comparison(
        run_config=RunConfig(iist=quick_config.with_overrides(max_outer_iters=0)),
        weights=narrow_weights,
        synth_size=32,
        include_baselines=False,
        include_appendix=True,
        make_plots=False,
    )
    appendix = state["table"][state["table"]["variant"] == VARIANT_APPENDIX]
    assert len(appendix) == 6
    assert sorted(set(appendix["pooling"])) == ["average", "max"]
    assert sorted(set(appendix["content_layer"])) == ["conv3_4", "conv4_4", "conv5_4"]
