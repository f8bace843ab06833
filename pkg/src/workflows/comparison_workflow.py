# src/workflows/comparison_workflow.py

from __future__ import annotations

import os
from typing import Any, Dict, List, Optional
from typing import TypedDict

import pandas as pd

from langgraph.graph import StateGraph, END

from src.analytics.detect import ChangeMap, detect_changes
from src.analytics.metrics import evaluate_maps, format_csv_line
from src.analytics.plots import plot_comparison, plot_lambda_sweep
from src.analytics.tables import comparison_frame, metrics_row, write_comparison_csv
from src.config import RunConfig
from src.imaging.image import Image, resize_like, to_rgb
from src.imaging.synthgen import gen_pair
from src.network.vggnet import ContentLayer, PoolingMode, VggWeights, random_base_weights
from src.transfer.iist import IistConfig, iist_run
from src.workflows.iist_constants import (
    APPENDIX_CONTENT_LAYERS,
    APPENDIX_POOLINGS,
    DETECTOR_OCSVM,
    DETECTOR_OTSU,
    LAMBDA_SWEEP,
    VARIANT_APPENDIX,
    VARIANT_DHFF,
    VARIANT_HFF,
    VARIANT_OCSVM_O,
    VARIANT_OTSU_O,
    VARIANT_SWEEP,
)


# ---------------------------------------------------------------------------
# State definition
# ---------------------------------------------------------------------------


class ComparisonState(TypedDict, total=False):
    """
    State used by the comparison harness LangGraph.
    """

    # Inputs
    opt_image: Image
    sar_image: Image
    truth: ChangeMap
    weights: VggWeights
    run_config: RunConfig
    include_baselines: bool
    include_appendix: bool
    include_sweep: bool
    lambdas: List[float]
    out_dir: Optional[str]
    plots_dir: Optional[str]
    make_plots: bool

    # Results
    rows: List[Dict[str, Any]]
    table: pd.DataFrame
    outputs: Dict[str, str]

    # Logging
    notes: List[str]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _pooling_name(pooling: PoolingMode) -> str:
    return PoolingMode(pooling).value


def _layer_name(layer: ContentLayer) -> str:
    return ContentLayer(layer).value


def evaluate_variant(
    state: ComparisonState,
    cfg: IistConfig,
    variant: str,
) -> Dict[str, Any]:
    """Transform, detect with the configured detector, score against truth."""
    run_config = state["run_config"]
    det = run_config.detector

    t2, trace = iist_run(state["opt_image"], state["sar_image"], state["weights"], cfg)
    detection = detect_changes(
        state["opt_image"],
        t2,
        det.method,
        nu=det.nu,
        gamma=det.gamma,
        radius=det.radius,
        max_train_samples=det.max_train_samples,
        seed=cfg.seed,
    )
    report = evaluate_maps(detection.change_map, state["truth"])
    return metrics_row(
        report,
        variant=variant,
        pooling=_pooling_name(cfg.pooling),
        content_layer=_layer_name(cfg.content_layer),
        lambda_c=cfg.lambda_c,
        stages=trace.stages,
    )


def _row_note(node: str, row: Dict[str, Any]) -> str:
    parts = [row["variant"]]
    parts += [str(row[key]) for key in ("pooling", "content_layer") if row.get(key)]
    if row.get("lambda_c") is not None:
        parts.append(f"lambda_c={row['lambda_c']:g}")
    return f"{node}: {' '.join(parts)} -> Ra={row['Ra']:.2f} Ka={row['Ka']:.2f}"


# ---------------------------------------------------------------------------
# Node implementations
# ---------------------------------------------------------------------------


def baselines_node(state: ComparisonState) -> Dict[str, Any]:
    """
    Detector straight on optical vs the prepared SAR image (no transfer),
    for both detectors.
    """
    notes = list(state.get("notes", []))
    rows = list(state.get("rows", []))
    run_config = state["run_config"]
    det = run_config.detector

    opt = to_rgb(state["opt_image"])
    prepared = to_rgb(resize_like(state["sar_image"], opt))

    for variant, method in ((VARIANT_OTSU_O, DETECTOR_OTSU), (VARIANT_OCSVM_O, DETECTOR_OCSVM)):
        detection = detect_changes(
            opt,
            prepared,
            method,
            nu=det.nu,
            gamma=det.gamma,
            radius=det.radius,
            max_train_samples=det.max_train_samples,
            seed=run_config.iist.seed,
        )
        report = evaluate_maps(detection.change_map, state["truth"])
        row = metrics_row(report, variant=variant)
        rows.append(row)
        notes.append(f"baselines: {variant} -> {format_csv_line(report)}")

    return {"rows": rows, "notes": notes}


def transfer_variants_node(state: ComparisonState) -> Dict[str, Any]:
    """HFF (a single transfer stage) and DHFF (the full iterative run)."""
    notes = list(state.get("notes", []))
    rows = list(state.get("rows", []))
    cfg = state["run_config"].iist

    for variant, variant_cfg in (
        (VARIANT_HFF, cfg.with_overrides(max_outer_iters=0)),
        (VARIANT_DHFF, cfg),
    ):
        row = evaluate_variant(state, variant_cfg, variant)
        rows.append(row)
        notes.append(_row_note("transfer_variants", row))

    return {"rows": rows, "notes": notes}


def appendix_node(state: ComparisonState) -> Dict[str, Any]:
    """Pooling mode x content layer grid of full runs."""
    notes = list(state.get("notes", []))
    rows = list(state.get("rows", []))
    cfg = state["run_config"].iist

    for pooling in APPENDIX_POOLINGS:
        for layer in APPENDIX_CONTENT_LAYERS:
            variant_cfg = cfg.with_overrides(pooling=PoolingMode(pooling), content_layer=ContentLayer(layer))
            row = evaluate_variant(state, variant_cfg, VARIANT_APPENDIX)
            rows.append(row)
            notes.append(_row_note("appendix", row))

    return {"rows": rows, "notes": notes}


def lambda_sweep_node(state: ComparisonState) -> Dict[str, Any]:
    notes = list(state.get("notes", []))
    rows = list(state.get("rows", []))
    cfg = state["run_config"].iist

    for lambda_c in state.get("lambdas") or LAMBDA_SWEEP:
        row = evaluate_variant(state, cfg.with_overrides(lambda_c=float(lambda_c)), VARIANT_SWEEP)
        rows.append(row)
        notes.append(_row_note("lambda_sweep", row))

    return {"rows": rows, "notes": notes}


def build_table_node(state: ComparisonState) -> Dict[str, Any]:
    """
    Collect the rows into the comparison table and write the CSV and
    figures when requested.
    """
    notes = list(state.get("notes", []))
    outputs = dict(state.get("outputs", {}))
    table = comparison_frame(state.get("rows", []))

    out_dir = state.get("out_dir")
    if out_dir:
        outputs["comparison_csv"] = str(write_comparison_csv(table, os.path.join(out_dir, "comparison.csv")))

    if state.get("make_plots", True) and not table.empty:
        plots_dir = state.get("plots_dir")
        main_rows = table[table["variant"] != VARIANT_SWEEP].reset_index(drop=True)
        sweep_rows = table[table["variant"] == VARIANT_SWEEP].reset_index(drop=True)
        plotted = {
            "plot_comparison": plot_comparison(main_rows, plots_dir=plots_dir),
            "plot_lambda_sweep": plot_lambda_sweep(sweep_rows, plots_dir=plots_dir),
        }
        outputs.update({key: path for key, path in plotted.items() if path})

    notes.append(f"build_table: {len(table)} row(s)")
    return {"table": table, "outputs": outputs, "notes": notes}


# ---------------------------------------------------------------------------
# Conditional routing
# ---------------------------------------------------------------------------


def _first_enabled(state: ComparisonState, after: str) -> str:
    order = [
        ("baselines", state.get("include_baselines", True)),
        ("transfer_variants", True),
        ("appendix", state.get("include_appendix", False)),
        ("lambda_sweep", state.get("include_sweep", False)),
    ]
    names = [name for name, _ in order]
    start = names.index(after) + 1 if after else 0
    for name, enabled in order[start:]:
        if enabled:
            return name
    return "build_table"


def route_start(state: ComparisonState) -> str:
    return _first_enabled(state, "")


def route_after_variants(state: ComparisonState) -> str:
    return _first_enabled(state, "transfer_variants")


def route_after_appendix(state: ComparisonState) -> str:
    return _first_enabled(state, "appendix")


# ---------------------------------------------------------------------------
# Graph builder
# ---------------------------------------------------------------------------


def build_comparison_graph():
    """
    Build the comparison harness LangGraph.

    Flow:

        (start) ─▶ baselines? ─▶ transfer_variants ─▶ appendix? ─▶ lambda_sweep? ─▶ build_table ─▶ END

    Optional stages are skipped through conditional edges.
    """
    graph = StateGraph(ComparisonState)

    graph.add_node("start", lambda state: {"notes": list(state.get("notes", []))})
    graph.add_node("baselines", baselines_node)
    graph.add_node("transfer_variants", transfer_variants_node)
    graph.add_node("appendix", appendix_node)
    graph.add_node("lambda_sweep", lambda_sweep_node)
    graph.add_node("build_table", build_table_node)

    graph.set_entry_point("start")

    graph.add_conditional_edges(
        "start",
        route_start,
        {"baselines": "baselines", "transfer_variants": "transfer_variants"},
    )
    graph.add_edge("baselines", "transfer_variants")
    graph.add_conditional_edges(
        "transfer_variants",
        route_after_variants,
        {"appendix": "appendix", "lambda_sweep": "lambda_sweep", "build_table": "build_table"},
    )
    graph.add_conditional_edges(
        "appendix",
        route_after_appendix,
        {"lambda_sweep": "lambda_sweep", "build_table": "build_table"},
    )
    graph.add_edge("lambda_sweep", "build_table")
    graph.add_edge("build_table", END)

    return graph.compile()


def run_comparison(
    *,
    run_config: Optional[RunConfig] = None,
    opt_image: Optional[Image] = None,
    sar_image: Optional[Image] = None,
    truth: Optional[ChangeMap] = None,
    weights: Optional[VggWeights] = None,
    synth_seed: int = 3,
    synth_size: int = 64,
    change_fraction: float = 0.1,
    **options: Any,
) -> ComparisonState:
    """
    Run the harness on the given pair, or on the synthetic pair when no
    images are given. Remaining keyword arguments go into the initial state
    (include_appendix, include_sweep, out_dir, plots_dir, ...).
    """
    run_config = run_config or RunConfig()
    notes: List[str] = []
    if opt_image is None or sar_image is None or truth is None:
        opt_image, sar_image, truth = gen_pair(synth_seed, synth_size, change_fraction)
        notes.append(f"run_comparison: synthetic pair seed={synth_seed} size={synth_size}")
    if weights is None:
        weights = random_base_weights(run_config.iist.seed)

    state: Dict[str, Any] = {
        "opt_image": opt_image,
        "sar_image": sar_image,
        "truth": truth,
        "weights": weights,
        "run_config": run_config,
        "rows": [],
        "outputs": {},
        "notes": notes,
    }
    state.update(options)
    return build_comparison_graph().invoke(state)
