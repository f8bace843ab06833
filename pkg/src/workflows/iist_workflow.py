# src/workflows/iist_workflow.py

from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple
from typing import TypedDict

import numpy as np

from langgraph.graph import StateGraph, END

from src.imaging.image import Image, resize_like, to_rgb
from src.network.vggnet import VggWeights, randomize_weights
from src.transfer.iist import IistConfig, IistTrace, StageRecord, ist_stage
from src.workflows.iist_constants import (
    STOP_CONVERGED,
    STOP_MAX_ITERS,
    STOP_SINGLE_STAGE,
)


# ---------------------------------------------------------------------------
# State definition
# ---------------------------------------------------------------------------


class IistState(TypedDict, total=False):
    """
    State used by the iterative transfer LangGraph.
    """

    # Inputs
    opt_image: Image
    sar_image: Image
    base_weights: VggWeights
    cfg: IistConfig

    # Prepared once
    prepared_sar: Image                 # SAR resized to the optical grid, 3 channels

    # Loop
    k: int                              # stage index, 0..N
    current: Image                      # latest stage output (init of the next stage)
    records: List[StageRecord]
    snapshots: Dict[int, Image]
    last_diff: Optional[float]          # mean |T^k - T^(k-1)|, None at k = 0

    # Loop / control
    stop_decision: str                  # "next" | "converged" | "max_iters" | "single_stage"
    stop_reason: str

    # Logging
    notes: List[str]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def mean_abs_diff(a: Image, b: Image) -> float:
    """Mean absolute per-pixel difference on the [0, 1] scale."""
    return float(np.mean(np.abs(a.data - b.data)))


def stage_weights(base: VggWeights, cfg: IistConfig, k: int) -> VggWeights:
    """W^0 for stage 0, re-randomised weights for every later stage."""
    if k == 0:
        return base
    return randomize_weights(base, cfg.alpha, cfg.seed, k)


# ---------------------------------------------------------------------------
# Node implementations
# ---------------------------------------------------------------------------


def prepare_inputs_node(state: IistState) -> Dict[str, Any]:
    """
    Equalise resolutions: SAR is resampled onto the optical grid and its
    band replicated to three channels.
    """
    notes = list(state.get("notes", []))
    opt = to_rgb(state["opt_image"])
    sar = state["sar_image"]

    prepared = to_rgb(resize_like(sar, opt))
    notes.append(
        f"prepare_inputs: optical {opt.height}x{opt.width}, "
        f"SAR {sar.height}x{sar.width}x{sar.channels} -> {prepared.height}x{prepared.width}x3"
    )

    return {
        "opt_image": opt,
        "prepared_sar": prepared,
        "k": 0,
        "current": prepared,
        "records": [],
        "snapshots": {},
        "last_diff": None,
        "stop_decision": "",
        "stop_reason": "",
        "notes": notes,
    }


def run_stage_node(state: IistState) -> Dict[str, Any]:
    """
    One transfer stage: content of the prepared SAR image, style of the
    optical image, both under this stage's weights, started from `current`.
    """
    cfg = state["cfg"]
    k = state.get("k", 0)
    notes = list(state.get("notes", []))
    records = list(state.get("records", []))
    snapshots = dict(state.get("snapshots", {}))
    previous = state["current"]

    weights = stage_weights(state["base_weights"], cfg, k)
    result = ist_stage(previous, state["prepared_sar"], state["opt_image"], weights, cfg.for_stage(k))

    diff = mean_abs_diff(result.image, previous) if k >= 1 else None
    records.append(
        StageRecord(
            k=k,
            inner_iterations=result.inner_iterations,
            loss=result.final_loss,
            content_term=result.content_term,
            style_term=result.style_term,
            diff_to_prev=diff,
            status=result.status,
        )
    )
    if k in cfg.snapshot_stages:
        snapshots[k] = result.image

    diff_text = "n/a" if diff is None else f"{diff:.6f}"
    notes.append(
        f"run_stage: k={k} iters={result.inner_iterations} status={result.status} "
        f"loss {result.initial_loss:.6e} -> {result.final_loss:.6e} diff={diff_text}"
    )
    if cfg.verbose:
        print(notes[-1])

    return {
        "current": result.image,
        "records": records,
        "snapshots": snapshots,
        "last_diff": diff,
        "notes": notes,
    }


def check_convergence_node(state: IistState) -> Dict[str, Any]:
    """
    Stop rule:

    1. N = 0: only stage 0 runs.
    2. k >= 1 and mean |T^k - T^(k-1)| < epsilon: converged.
    3. k = N: budget spent.

    This node sets:
        - stop_decision: "next" | "converged" | "max_iters" | "single_stage"
    """
    cfg = state["cfg"]
    k = state.get("k", 0)
    diff = state.get("last_diff")
    notes = list(state.get("notes", []))

    if cfg.max_outer_iters == 0:
        decision = STOP_SINGLE_STAGE
    elif diff is not None and diff < cfg.epsilon:
        decision = STOP_CONVERGED
    elif k >= cfg.max_outer_iters:
        decision = STOP_MAX_ITERS
    else:
        decision = "next"

    notes.append(f"check_convergence: k={k} decision={decision}")
    out: Dict[str, Any] = {"stop_decision": decision, "notes": notes}
    if decision != "next":
        out["stop_reason"] = decision
    return out


def advance_node(state: IistState) -> Dict[str, Any]:
    return {"k": state.get("k", 0) + 1}


# ---------------------------------------------------------------------------
# Conditional routing
# ---------------------------------------------------------------------------


def route_after_check(state: IistState) -> str:
    """
    Returns one of:
      - "next" -> run another stage with fresh random weights
      - "done" -> leave the loop
    """
    if state.get("stop_decision", "") == "next":
        return "next"
    return "done"


# ---------------------------------------------------------------------------
# Graph builder
# ---------------------------------------------------------------------------


def build_iist_graph():
    """
    Build the iterative transfer LangGraph.

    Flow:

        prepare_inputs
            ↓
        run_stage
            ↓
        check_convergence ──(done)──▶ END
                 │
                 └── next ──▶ advance ──▶ run_stage (loop)
    """
    graph = StateGraph(IistState)

    graph.add_node("prepare_inputs", prepare_inputs_node)
    graph.add_node("run_stage", run_stage_node)
    graph.add_node("check_convergence", check_convergence_node)
    graph.add_node("advance", advance_node)

    graph.set_entry_point("prepare_inputs")

    graph.add_edge("prepare_inputs", "run_stage")
    graph.add_edge("run_stage", "check_convergence")
    graph.add_edge("advance", "run_stage")

    graph.add_conditional_edges(
        "check_convergence",
        route_after_check,
        {
            "next": "advance",
            "done": END,
        },
    )

    return graph.compile()


def recursion_limit_for(cfg: IistConfig) -> int:
    # three node visits per stage plus prepare
    return 3 * (cfg.max_outer_iters + 2) + 10


def run_iist_graph(
    opt_image: Image,
    sar_image: Image,
    base_weights: VggWeights,
    cfg: IistConfig,
) -> Tuple[Image, IistTrace]:
    cfg.validate()
    state = build_iist_graph().invoke(
        {
            "opt_image": opt_image,
            "sar_image": sar_image,
            "base_weights": base_weights,
            "cfg": cfg,
            "notes": [],
        },
        config={"recursion_limit": recursion_limit_for(cfg)},
    )
    trace = IistTrace(
        records=list(state.get("records", [])),
        stop_reason=state.get("stop_reason", ""),
        snapshots=dict(state.get("snapshots", {})),
        prepared_sar=state.get("prepared_sar"),
        notes=list(state.get("notes", [])),
    )
    return state["current"], trace
