# src/transfer/iist.py
"""
Iterative image style transfer: the cost, one transfer stage, and the
outer loop entry point.

Cost for a candidate image I under stage weights W^k:

    L(I) = lambda_c * ||C(I) - C_target||^2 / ||C_target||^2
         + (1 - lambda_c) * sum_s ||G_s(I) - G_s_target||^2 / ||G_s_target||^2

C is the content layer's pre-activation map, G_s the five pooling-stage Gram
matrices. One forward and one backward pass give the loss and its exact
gradient with respect to the pixels. Stages search over the pixel box
[0, 1]: the cost is evaluated on the clamped image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from src.imaging.image import DimensionMismatchError, Image, require_same_size
from src.network.features import (
    ContentFeatures,
    StyleFeatures,
    content_from_cache,
    gram,
    gram_loss_grad,
    style_from_cache,
)
from src.network.vggnet import (
    NUM_LAYERS,
    ContentLayer,
    PoolingMode,
    VggWeights,
    backward_to_input,
    forward,
)
from src.optim.lbfgs import LbfgsSettings, lbfgs_minimize
from src.workflows.iist_constants import (
    DEFAULT_ALPHA,
    DEFAULT_EPSILON,
    DEFAULT_LAMBDA_C,
    DEFAULT_MAX_OUTER_ITERS,
    DEFAULT_PRECISION,
    DEFAULT_REFINE_INNER_ITERS,
    DEFAULT_SEED,
    PRECISIONS,
    TRACE_FIELDS,
)

ENERGY_FLOOR = 1e-12


# ---------- Config ----------


@dataclass(frozen=True)
class IistConfig:
    lambda_c: float = DEFAULT_LAMBDA_C
    alpha: Tuple[float, ...] = (DEFAULT_ALPHA,) * NUM_LAYERS
    max_outer_iters: int = DEFAULT_MAX_OUTER_ITERS
    epsilon: float = DEFAULT_EPSILON
    content_layer: ContentLayer = ContentLayer.CONV5_4
    pooling: PoolingMode = PoolingMode.MAX
    seed: int = DEFAULT_SEED
    lbfgs: LbfgsSettings = field(default_factory=LbfgsSettings)
    refine_inner_iters: Optional[int] = DEFAULT_REFINE_INNER_ITERS  # cap for stages k >= 1
    relative_terms: bool = True
    precision: str = DEFAULT_PRECISION
    snapshot_stages: FrozenSet[int] = frozenset()
    verbose: bool = False

    def validate(self) -> "IistConfig":
        if not 0.0 < self.lambda_c < 1.0:
            raise ValueError(f"lambda_c must lie in (0, 1), got {self.lambda_c}")
        if self.max_outer_iters < 0:
            raise ValueError(f"max_outer_iters must be >= 0, got {self.max_outer_iters}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if len(self.alpha) != NUM_LAYERS:
            raise ValueError(f"alpha needs {NUM_LAYERS} entries, got {len(self.alpha)}")
        if any(a < 0 for a in self.alpha):
            raise ValueError(f"alpha entries must be >= 0, got {list(self.alpha)}")
        if self.refine_inner_iters is not None and self.refine_inner_iters < 0:
            raise ValueError(f"refine_inner_iters must be >= 0, got {self.refine_inner_iters}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        ContentLayer(self.content_layer)
        PoolingMode(self.pooling)
        self.lbfgs.validate()
        return self

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    def with_overrides(self, **changes) -> "IistConfig":
        return replace(self, **changes).validate()

    def for_stage(self, k: int) -> "IistConfig":
        """Stage 0 runs the full L-BFGS budget; later stages at most refine_inner_iters."""
        if k == 0 or self.refine_inner_iters is None:
            return self
        if self.refine_inner_iters >= self.lbfgs.max_inner_iters:
            return self
        return replace(self, lbfgs=replace(self.lbfgs, max_inner_iters=self.refine_inner_iters))


def broadcast_alpha(value: Sequence[float] | float) -> Tuple[float, ...]:
    """One scale for every layer, or exactly one per layer."""
    if isinstance(value, (int, float)):
        return (float(value),) * NUM_LAYERS
    values = tuple(float(v) for v in value)
    if len(values) == 1:
        return values * NUM_LAYERS
    if len(values) != NUM_LAYERS:
        raise ValueError(f"alpha needs 1 or {NUM_LAYERS} entries, got {len(values)}")
    return values


# ---------- Results ----------


@dataclass(frozen=True)
class ObjectiveValue:
    loss: float
    grad: np.ndarray  # 3 x H x W, float64
    content_term: float
    style_term: float


@dataclass(frozen=True)
class StageResult:
    image: Image
    final_loss: float
    content_term: float
    style_term: float
    inner_iterations: int
    initial_loss: float = float("nan")
    status: str = ""
    history: Tuple[float, ...] = ()


@dataclass(frozen=True)
class StageRecord:
    k: int
    inner_iterations: int
    loss: float
    content_term: float
    style_term: float
    diff_to_prev: Optional[float]
    status: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {name: getattr(self, name) for name in TRACE_FIELDS}


@dataclass
class IistTrace:
    records: List[StageRecord] = field(default_factory=list)
    stop_reason: str = ""
    snapshots: Dict[int, Image] = field(default_factory=dict)
    prepared_sar: Optional[Image] = None
    notes: List[str] = field(default_factory=list)

    @property
    def diff_history(self) -> List[float]:
        return [r.diff_to_prev for r in self.records if r.diff_to_prev is not None]

    @property
    def stages(self) -> int:
        return len(self.records)

    def to_dicts(self) -> List[Dict[str, object]]:
        return [r.to_dict() for r in self.records]


# ---------- Cost ----------


def _network_input(image: Image, dtype: np.dtype) -> np.ndarray:
    if image.channels != 3:
        raise DimensionMismatchError(f"Transfer images must have 3 channels, got {image.channels}")
    return image.to_chw(dtype)


def _energy_scale(target: np.ndarray) -> float:
    """1 / ||target||^2, floored so an all-zero target stays finite."""
    energy = float(np.sum(np.square(target, dtype=np.float64)))
    return 1.0 / max(energy, ENERGY_FLOOR)


def evaluate_objective(
    x: np.ndarray,
    content_target: ContentFeatures,
    style_target: StyleFeatures,
    weights: VggWeights,
    lambda_c: float,
    mode: PoolingMode = PoolingMode.MAX,
    content_layer: ContentLayer = ContentLayer.CONV5_4,
    relative: bool = True,
) -> ObjectiveValue:
    """
    Loss and pixel gradient for a 3 x H x W array.

    With `relative` each term is relative to its target's energy: the content term is
    ||C - C_target||^2 / ||C_target||^2 and every Gram block contributes
    ||G - G_target||^2 / ||G_target||^2, so the cost does not change when
    the feature magnitudes of W^k are rescaled. Without it the terms are the
    plain squared distances.

    The compute dtype follows `x`. lambda_c may sit on either end of [0, 1];
    the open interval is enforced by IistConfig, not here.
    """
    if not 0.0 <= lambda_c <= 1.0:
        raise ValueError(f"lambda_c must lie in [0, 1], got {lambda_c}")

    cache = forward(weights, x, mode)
    fmap = cache.conv_output(ContentLayer(content_layer).index)
    if fmap.shape != tuple(content_target.shape):
        raise DimensionMismatchError(
            f"Content map {fmap.shape} does not match target {tuple(content_target.shape)}"
        )
    if len(style_target.blocks) != len(cache.pools):
        raise DimensionMismatchError(
            f"Style target has {len(style_target.blocks)} blocks, network gives {len(cache.pools)}"
        )

    target_map = content_target.as_map()
    content_scale = _energy_scale(target_map) if relative else 1.0
    content_diff = fmap - target_map.astype(fmap.dtype, copy=False)
    content_term = content_scale * float(np.sum(np.square(content_diff, dtype=np.float64)))
    content_seed = (2.0 * lambda_c * content_scale) * content_diff if lambda_c > 0.0 else None

    style_term = 0.0
    style_seeds: List[Optional[np.ndarray]] = []
    for pooled, target in zip(cache.pools, style_target.blocks):
        if (pooled.shape[0],) * 2 != target.values.shape:
            raise DimensionMismatchError(
                f"Gram target {target.values.shape} does not fit a {pooled.shape[0]}-channel map"
            )
        block_scale = _energy_scale(target.values) if relative else 1.0
        current = gram(pooled)
        diff = current.values.astype(np.float64) - target.values.astype(np.float64)
        style_term += block_scale * float(np.sum(diff * diff))
        if lambda_c < 1.0:
            style_seeds.append(((1.0 - lambda_c) * block_scale) * gram_loss_grad(pooled, current, target))
        else:
            style_seeds.append(None)

    grad = backward_to_input(weights, cache, content_seed, style_seeds, mode, content_layer)
    loss = lambda_c * content_term + (1.0 - lambda_c) * style_term
    return ObjectiveValue(
        loss=loss,
        grad=grad.astype(np.float64),
        content_term=content_term,
        style_term=style_term,
    )


def loss_and_grad(
    image: Image,
    content_target: ContentFeatures,
    style_target: StyleFeatures,
    weights_k: VggWeights,
    cfg: IistConfig,
) -> Tuple[float, np.ndarray, float, float]:
    """
    Returns:
        (loss, gradient shaped like image.data (H x W x 3), content_term, style_term)
    """
    value = evaluate_objective(
        _network_input(image, cfg.dtype),
        content_target,
        style_target,
        weights_k,
        cfg.lambda_c,
        cfg.pooling,
        cfg.content_layer,
        cfg.relative_terms,
    )
    return value.loss, value.grad.transpose(1, 2, 0), value.content_term, value.style_term


# ---------- One stage ----------


def stage_targets(
    sar_for_content: Image,
    opt_for_style: Image,
    weights_k: VggWeights,
    cfg: IistConfig,
) -> Tuple[ContentFeatures, StyleFeatures]:
    """Content of the SAR image and style of the optical image under W^k."""
    content = content_from_cache(
        forward(weights_k, _network_input(sar_for_content, cfg.dtype), cfg.pooling),
        cfg.content_layer,
    )
    style = style_from_cache(forward(weights_k, _network_input(opt_for_style, cfg.dtype), cfg.pooling))
    return content, style


def box_gradient(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """
    Gradient of L(clamp(x)) with respect to x.

    Zero outside [0, 1]. On a bound a component survives only when a
    descent step moves the pixel back inside.
    """
    keep = ((x > 0.0) | ((x == 0.0) & (grad < 0.0))) & ((x < 1.0) | ((x == 1.0) & (grad > 0.0)))
    return np.where(keep, grad, 0.0)


def ist_stage(
    init: Image,
    sar_for_content: Image,
    opt_for_style: Image,
    weights_k: VggWeights,
    cfg: IistConfig,
) -> StageResult:
    """
    Minimise the cost from `init` over the pixel box, then clamp to [0, 1].

    L-BFGS runs on unconstrained pixels while the cost is evaluated on
    their clamped copy, so the returned image scores exactly the last
    accepted loss. A stage never makes its own objective worse: if the
    result is above the starting loss the start image is kept.
    """
    require_same_size(init, sar_for_content, "init vs SAR content image")
    require_same_size(init, opt_for_style, "init vs optical style image")

    content_target, style_target = stage_targets(sar_for_content, opt_for_style, weights_k, cfg)
    dtype = cfg.dtype
    chw = (3, init.height, init.width)
    first: List[ObjectiveValue] = []

    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        value = evaluate_objective(
            np.clip(x, 0.0, 1.0).reshape(chw).astype(dtype),
            content_target,
            style_target,
            weights_k,
            cfg.lambda_c,
            cfg.pooling,
            cfg.content_layer,
            cfg.relative_terms,
        )
        if not first:
            first.append(value)
        return value.loss, box_gradient(x, value.grad.ravel())

    x0 = _network_input(init, np.float64).ravel()
    result = lbfgs_minimize(objective, x0, cfg.lbfgs, verbose=cfg.verbose)

    if not first:
        # non-finite on the very first evaluation
        return StageResult(init, float("nan"), float("nan"), float("nan"), 0,
                           float("nan"), result.status, tuple(result.history))

    start = first[0]
    if result.iterations == 0:
        return StageResult(init, start.loss, start.content_term, start.style_term, 0,
                           start.loss, result.status, tuple(result.history))

    image = Image.from_array(result.x.reshape(chw).transpose(1, 2, 0), clip=True)
    final = evaluate_objective(
        image.to_chw(dtype), content_target, style_target, weights_k,
        cfg.lambda_c, cfg.pooling, cfg.content_layer, cfg.relative_terms,
    )

    if not final.loss <= start.loss:
        return StageResult(init, start.loss, start.content_term, start.style_term,
                           result.iterations, start.loss, result.status, tuple(result.history))

    return StageResult(
        image=image,
        final_loss=final.loss,
        content_term=final.content_term,
        style_term=final.style_term,
        inner_iterations=result.iterations,
        initial_loss=start.loss,
        status=result.status,
        history=tuple(result.history),
    )


# ---------- Full run ----------


def iist_run(
    I_opt: Image,
    I_sar: Image,
    W0: VggWeights,
    cfg: IistConfig,
) -> Tuple[Image, IistTrace]:
    """
    Transform the SAR image into the optical feature space.

    Runs the stage loop graph: stage 0 with W0 from the prepared SAR image,
    stage k >= 1 with re-randomised weights from the previous output, until
    consecutive outputs differ by less than epsilon or stage N is done.
    """
    from src.workflows.iist_workflow import run_iist_graph

    return run_iist_graph(I_opt, I_sar, W0, cfg)
