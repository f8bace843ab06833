# src/workflows/dhff_workflow.py

from __future__ import annotations

import json
import os
from typing import Any, Dict, List, Optional
from typing import TypedDict

import numpy as np

from langgraph.graph import StateGraph, END

from src.analytics.detect import ChangeMap, DetectionResult, detect_changes
from src.analytics.metrics import MetricsReport, error_map, evaluate_maps, format_csv_line
from src.analytics.plots import (
    plot_error_map,
    plot_iist_trace,
    plot_stage_snapshots,
)
from src.analytics.tables import trace_frame, write_trace_jsonl
from src.config import RunConfig
from src.imaging.image import Image
from src.imaging.pnm import load_pnm, save_pnm
from src.imaging.synthgen import gen_pair
from src.network.vggnet import VggWeights, random_base_weights
from src.network.weights_io import load_weights
from src.transfer.iist import IistTrace, iist_run


# ---------------------------------------------------------------------------
# State definition
# ---------------------------------------------------------------------------


class DhffState(TypedDict, total=False):
    """
    State for the end-to-end change detection workflow.

    Fields:

      - opt_path / sar_path / truth_path / weights_path: optional inputs;
        without image paths a synthetic pair is generated
      - opt_image / sar_image / truth: optional preloaded pair (wins over the paths)
      - weights: optional preloaded network (wins over weights_path)
      - synth_seed / synth_size / change_fraction: synthetic pair settings
      - run_config: IIST + detector configuration
      - train_mask: optional (H, W) bool mask of known-unchanged pixels
      - out_dir / plots_dir: where files go (None = do not write)
      - notes: list of debug / info strings
    """

    # Inputs
    opt_path: Optional[str]
    sar_path: Optional[str]
    truth_path: Optional[str]
    weights_path: Optional[str]
    synth_seed: int
    synth_size: int
    change_fraction: float
    run_config: RunConfig
    train_mask: Optional[np.ndarray]
    out_dir: Optional[str]
    plots_dir: Optional[str]
    make_plots: bool

    # Loaded
    opt_image: Image
    sar_image: Image
    truth: Optional[ChangeMap]
    weights: VggWeights

    # Results
    t2: Image
    trace: IistTrace
    detection: DetectionResult
    metrics: Optional[MetricsReport]
    outputs: Dict[str, str]

    notes: List[str]


# ---------------------------------------------------------------------------
# Node implementations
# ---------------------------------------------------------------------------


def load_inputs_node(state: DhffState) -> Dict[str, Any]:
    """
    Take the optical / SAR pair (and truth) from the caller, load it from
    disk, or generate the synthetic pair when neither is given. Weights
    come from the caller, a DHFFW1 file or random_base_weights(seed).
    """
    notes = list(state.get("notes", []))
    cfg = state["run_config"].iist

    truth: Optional[ChangeMap] = state.get("truth")
    if state.get("opt_image") is not None and state.get("sar_image") is not None:
        opt, sar = state["opt_image"], state["sar_image"]
        notes.append(f"load_inputs: caller-supplied images {opt.shape} and {sar.shape}")
    elif state.get("opt_path") and state.get("sar_path"):
        opt = load_pnm(state["opt_path"])
        sar = load_pnm(state["sar_path"])
        if state.get("truth_path"):
            truth = ChangeMap.from_image(load_pnm(state["truth_path"]))
        notes.append(f"load_inputs: read {state['opt_path']} and {state['sar_path']}")
    else:
        seed = state.get("synth_seed", 3)
        size = state.get("synth_size", 64)
        fraction = state.get("change_fraction", 0.1)
        opt, sar, truth = gen_pair(seed, size, fraction)
        notes.append(
            f"load_inputs: synthetic pair seed={seed} size={size} "
            f"change_fraction={fraction} (truth changes={truth.change_count})"
        )

    if state.get("weights") is not None:
        weights = state["weights"]
        notes.append(f"load_inputs: caller-supplied weights, plan {list(weights.plan)}")
    elif state.get("weights_path"):
        weights = load_weights(state["weights_path"])
        notes.append(f"load_inputs: weights from {state['weights_path']}")
    else:
        weights = random_base_weights(cfg.seed)
        notes.append(f"load_inputs: random base weights (seed {cfg.seed})")

    return {
        "opt_image": opt,
        "sar_image": sar,
        "truth": truth,
        "weights": weights,
        "outputs": {},
        "notes": notes,
    }


def transform_node(state: DhffState) -> Dict[str, Any]:
    """Bring the SAR image into the optical feature space."""
    notes = list(state.get("notes", []))
    cfg = state["run_config"].iist

    t2, trace = iist_run(state["opt_image"], state["sar_image"], state["weights"], cfg)
    notes.extend(trace.notes)
    notes.append(f"transform: {trace.stages} stage(s), stop_reason={trace.stop_reason}")

    return {"t2": t2, "trace": trace, "notes": notes}


def detect_node(state: DhffState) -> Dict[str, Any]:
    notes = list(state.get("notes", []))
    run_config = state["run_config"]
    det = run_config.detector

    detection = detect_changes(
        state["opt_image"],
        state["t2"],
        det.method,
        nu=det.nu,
        gamma=det.gamma,
        radius=det.radius,
        max_train_samples=det.max_train_samples,
        train_mask=state.get("train_mask"),
        seed=run_config.iist.seed,
    )
    extra = (
        f"threshold={detection.threshold:.4f}"
        if detection.threshold is not None
        else f"train_samples={detection.train_samples} self_trained={detection.self_trained}"
    )
    notes.append(
        f"detect: method={det.method} changed={detection.change_map.change_count} "
        f"pixels ({100.0 * detection.change_map.change_fraction:.2f}%), {extra}"
    )
    return {"detection": detection, "notes": notes}


def evaluate_node(state: DhffState) -> Dict[str, Any]:
    notes = list(state.get("notes", []))
    report = evaluate_maps(state["detection"].change_map, state["truth"])
    notes.append(f"evaluate: Ra,Rp,Rr,Ka = {format_csv_line(report)}")
    return {"metrics": report, "notes": notes}


def write_outputs_node(state: DhffState) -> Dict[str, Any]:
    """
    Write t2.ppm, change.pgm, trace.jsonl and, with truth, error_map.ppm
    and metrics.json into out_dir.
    """
    notes = list(state.get("notes", []))
    outputs = dict(state.get("outputs", {}))
    out_dir = state.get("out_dir")
    if not out_dir:
        notes.append("write_outputs: no out_dir, skipping.")
        return {"notes": notes}

    os.makedirs(out_dir, exist_ok=True)
    change_map = state["detection"].change_map

    outputs["t2"] = os.path.join(out_dir, "t2.ppm")
    save_pnm(state["t2"], outputs["t2"])
    outputs["change_map"] = os.path.join(out_dir, "change.pgm")
    save_pnm(change_map.to_image(), outputs["change_map"])
    outputs["trace"] = str(write_trace_jsonl(state["trace"], os.path.join(out_dir, "trace.jsonl")))

    for k, snapshot in sorted(state["trace"].snapshots.items()):
        path = os.path.join(out_dir, f"t2_k{k}.ppm")
        save_pnm(snapshot, path)
        outputs[f"snapshot_k{k}"] = path

    truth = state.get("truth")
    report = state.get("metrics")
    if truth is not None and report is not None:
        outputs["error_map"] = os.path.join(out_dir, "error_map.ppm")
        save_pnm(error_map(change_map, truth), outputs["error_map"])
        outputs["metrics"] = os.path.join(out_dir, "metrics.json")
        with open(outputs["metrics"], "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)

    notes.append(f"write_outputs: wrote {len(outputs)} file(s) to {out_dir}")
    return {"outputs": outputs, "notes": notes}


def generate_plots_node(state: DhffState) -> Dict[str, Any]:
    """Trace curves, stage snapshots and (with truth) the error map."""
    notes = list(state.get("notes", []))
    outputs = dict(state.get("outputs", {}))
    if not state.get("make_plots", True):
        notes.append("generate_plots: plots disabled, skipping.")
        return {"notes": notes}

    plots_dir = state.get("plots_dir")
    trace = state["trace"]
    cfg = state["run_config"].iist

    trace_plot = plot_iist_trace(trace_frame(trace), epsilon=cfg.epsilon, plots_dir=plots_dir)
    if trace_plot:
        outputs["plot_trace"] = trace_plot
    outputs["plot_snapshots"] = plot_stage_snapshots(
        state["opt_image"],
        trace.prepared_sar if trace.prepared_sar is not None else state["sar_image"],
        trace.snapshots,
        state["t2"],
        plots_dir=plots_dir,
    )
    truth = state.get("truth")
    if truth is not None:
        outputs["plot_error_map"] = plot_error_map(
            error_map(state["detection"].change_map, truth), plots_dir=plots_dir
        )

    notes.append(f"generate_plots: saved plots to {plots_dir or 'default plots dir'}")
    return {"outputs": outputs, "notes": notes}


# ---------------------------------------------------------------------------
# Conditional routing
# ---------------------------------------------------------------------------


def route_after_detect(state: DhffState) -> str:
    """
    Returns one of:
      - "evaluate" -> a truth map is available
      - "skip"     -> no truth; go straight to the outputs
    """
    return "evaluate" if state.get("truth") is not None else "skip"


# ---------------------------------------------------------------------------
# Graph builder
# ---------------------------------------------------------------------------


def build_dhff_graph():
    """
    Build the end-to-end LangGraph.

    Flow:

        load_inputs
            ↓
        transform
            ↓
        detect ──(skip)──────────────┐
            │                        ↓
            └─ evaluate ──▶ write_outputs ──▶ generate_plots ──▶ END
    """
    graph = StateGraph(DhffState)

    graph.add_node("load_inputs", load_inputs_node)
    graph.add_node("transform", transform_node)
    graph.add_node("detect", detect_node)
    graph.add_node("evaluate", evaluate_node)
    graph.add_node("write_outputs", write_outputs_node)
    graph.add_node("generate_plots", generate_plots_node)

    graph.set_entry_point("load_inputs")

    graph.add_edge("load_inputs", "transform")
    graph.add_edge("transform", "detect")
    graph.add_edge("evaluate", "write_outputs")
    graph.add_edge("write_outputs", "generate_plots")
    graph.add_edge("generate_plots", END)

    graph.add_conditional_edges(
        "detect",
        route_after_detect,
        {
            "evaluate": "evaluate",
            "skip": "write_outputs",
        },
    )

    return graph.compile()


def run_dhff(**inputs: Any) -> DhffState:
    """Invoke the end-to-end graph; keyword arguments become the initial state."""
    state: Dict[str, Any] = {"run_config": RunConfig(), "notes": []}
    state.update(inputs)
    return build_dhff_graph().invoke(state)
