#src/analytics/detect.py
"""
Change detectors for a homogeneous pair (optical, transformed SAR).

  - difference_image + otsu_threshold: unsupervised baseline
  - pixel_features + one-class SVM: trained on unchanged samples, flags
    outliers as change
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.imaging.image import DimensionMismatchError, Image, require_same_size, to_rgb
from src.utils.rng import PURPOSE_TRAIN_SAMPLES, derive_stream, sample_indices
from src.workflows.iist_constants import (
    DEFAULT_MAX_TRAIN_SAMPLES,
    DEFAULT_NU,
    DEFAULT_RADIUS,
    SELF_TRAINING_FRACTION,
)

OTSU_LEVELS = 256
_SCORE_CHUNK = 4096


# ---------- Change map ----------


@dataclass(frozen=True)
class ChangeMap:
    """Binary decision raster: True = change."""

    bits: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if self.bits.ndim != 2:
            raise ValueError(f"ChangeMap must be H x W, got {self.bits.shape}")

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "ChangeMap":
        arr = np.array(bits, dtype=bool)
        arr.setflags(write=False)
        return cls(arr)

    @classmethod
    def empty(cls, height: int, width: int) -> "ChangeMap":
        return cls.from_bits(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_image(cls, img: Image) -> "ChangeMap":
        """Gray raster -> map; values >= 0.5 (byte >= 128) are change."""
        if img.channels != 1:
            raise DimensionMismatchError(f"Change maps are single-band, got {img.channels} channels")
        return cls.from_bits(img.data[:, :, 0] >= 0.5)

    def to_image(self) -> Image:
        """0 / 1 gray Image, saved as a {0, 255} PGM."""
        return Image.from_array(self.bits.astype(np.float64))

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def change_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def change_fraction(self) -> float:
        return self.change_count / self.bits.size


# ---------- Difference + Otsu ----------


def difference_image(a: Image, b: Image) -> Image:
    """Per-pixel Euclidean distance across channels, divided by sqrt(C)."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"difference_image: {a.shape} vs {b.shape}")
    d = a.data - b.data
    dist = np.sqrt(np.sum(d * d, axis=2)) / np.sqrt(a.channels)
    return Image.from_array(dist, clip=True)


def quantize_levels(gray: Image) -> np.ndarray:
    """Otsu levels 0..255, same rounding as the PNM writer."""
    return np.floor(gray.data[:, :, 0] * 255.0 + 0.5).astype(np.int64)


def otsu_threshold(gray: Image) -> Tuple[float, ChangeMap]:
    """
    Otsu's threshold over the 256-level histogram.

    Candidate k in 1..255 splits levels {< k} | {>= k}; its threshold value
    is (2k - 1) / 510, halfway between levels k - 1 and k. Between-class
    variance is compared exactly in integers and the lowest k wins ties.
    The map marks pixels whose value is strictly above the threshold; a
    pixel sitting exactly on it (level k, value (2k - 1) / 510) stays
    unchanged.

    A histogram with one occupied level q gives threshold (2q + 1) / 510
    and an empty map.
    """
    if gray.channels != 1:
        raise DimensionMismatchError(f"otsu_threshold needs a gray image, got {gray.channels} channels")

    levels = quantize_levels(gray)
    hist = np.bincount(levels.ravel(), minlength=OTSU_LEVELS).astype(np.int64)
    k = otsu_level(hist)

    if k is None:
        q = int(np.flatnonzero(hist)[0])
        return (2 * q + 1) / 510.0, ChangeMap.empty(gray.height, gray.width)

    threshold = (2 * k - 1) / 510.0
    return threshold, ChangeMap.from_bits(gray.data[:, :, 0] > threshold)


def otsu_level(hist: np.ndarray) -> Optional[int]:
    """
    Best split level k for a 256-bin histogram, or None when fewer than two
    levels are occupied.

    For split k with n0, n1 pixels and level sums s0, s1 the between-class
    variance is proportional to (n0 * s1 - n1 * s0)^2 / (n0 * n1).
    """
    counts = [int(c) for c in hist]
    sums = [i * c for i, c in enumerate(counts)]
    n_total, s_total = sum(counts), sum(sums)

    best_k: Optional[int] = None
    best_num, best_den = 0, 1
    n0 = s0 = 0
    for k in range(1, OTSU_LEVELS):
        n0 += counts[k - 1]
        s0 += sums[k - 1]
        n1, s1 = n_total - n0, s_total - s0
        if n0 == 0 or n1 == 0:
            continue
        d = n0 * s1 - n1 * s0
        num, den = d * d, n0 * n1
        # num / den > best_num / best_den, strictly, keeps the lowest k on ties
        if best_k is None or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k


# ---------- Pixel features ----------


def pixel_features(opt: Image, t2: Image, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    """
    (H, W, C + 1) features: |opt - t2| per channel, then the mean over the
    (2r + 1)^2 window (edge-replicated) of the per-pixel channel-mean
    absolute difference.
    """
    if opt.shape != t2.shape:
        raise DimensionMismatchError(f"pixel_features: {opt.shape} vs {t2.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")

    absdiff = np.abs(opt.data - t2.data)
    mad = absdiff.mean(axis=2)

    if radius == 0:
        local = mad
    else:
        win = 2 * radius + 1
        padded = np.pad(mad, radius, mode="edge")
        windows = np.lib.stride_tricks.sliding_window_view(padded, (win, win))
        local = windows.mean(axis=(2, 3))

    return np.concatenate([absdiff, local[:, :, None]], axis=2)


# ---------- OCSVM ----------


@dataclass(frozen=True)
class OcsvmModel:
    """
    f(x) = sum_j alpha_j * exp(-gamma * ||x - sv_j||^2) - rho

    alpha sums to 1 and each entry lies in [0, 1 / (nu * l)].
    """

    support_vectors: np.ndarray  # (n_sv, d)
    alpha: np.ndarray            # (n_sv,)
    rho: float
    gamma: float
    nu: float
    sv_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_train: int = 0
    iterations: int = 0
    kkt_violation: float = 0.0
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return int(self.support_vectors.shape[1])

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.nu * self.n_train) if self.n_train else 1.0

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"Feature dimension {x.shape[1]} does not match the model's {self.dim}"
            )
        out = np.empty(x.shape[0], dtype=np.float64)
        for start in range(0, x.shape[0], _SCORE_CHUNK):
            chunk = x[start:start + _SCORE_CHUNK]
            out[start:start + _SCORE_CHUNK] = rbf_kernel(chunk, self.support_vectors, self.gamma) @ self.alpha
        return out - self.rho

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "nu": self.nu,
            "rho": self.rho,
            "support_vectors": self.support_vectors.tolist(),
            "alpha": self.alpha.tolist(),
            "sv_indices": self.sv_indices.tolist(),
            "n_train": self.n_train,
            "iterations": self.iterations,
            "kkt_violation": self.kkt_violation,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OcsvmModel":
        raw = json.loads(text)
        return cls(
            support_vectors=np.asarray(raw["support_vectors"], dtype=np.float64).reshape(len(raw["alpha"]), -1),
            alpha=np.asarray(raw["alpha"], dtype=np.float64),
            rho=float(raw["rho"]),
            gamma=float(raw["gamma"]),
            nu=float(raw["nu"]),
            sv_indices=np.asarray(raw.get("sv_indices", []), dtype=np.int64),
            n_train=int(raw.get("n_train", 0)),
            iterations=int(raw.get("iterations", 0)),
            kkt_violation=float(raw.get("kkt_violation", 0.0)),
            degenerate=bool(raw.get("degenerate", False)),
        )


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def scale_gamma(samples: np.ndarray) -> float:
    """1 / (d * Var(X)); 1.0 when the samples have no spread."""
    var = float(np.var(samples))
    if var <= 0.0:
        return 1.0
    return 1.0 / (samples.shape[1] * var)


def _kkt_gap(alpha: np.ndarray, grad: np.ndarray, upper: float) -> float:
    """max G over alpha > 0 minus min G over alpha < C, floored at 0."""
    can_down = alpha > 0.0
    can_up = alpha < upper
    if not can_down.any() or not can_up.any():
        return 0.0
    return max(0.0, float(grad[can_down].max() - grad[can_up].min()))


def _initial_alpha(n: int, upper: float) -> np.ndarray:
    """Fill floor(nu * l) entries at the bound, the remainder on the next one."""
    alpha = np.zeros(n, dtype=np.float64)
    full = min(n, int(np.floor(1.0 / upper)))
    alpha[:full] = upper
    rest = 1.0 - full * upper
    if full < n and rest > 0.0:
        alpha[full] = rest
    return alpha


def ocsvm_train(
    samples: np.ndarray,
    nu: float = DEFAULT_NU,
    gamma: Optional[float] = None,
    tol: float = 1e-4,
    max_iter: int = 100_000,
) -> OcsvmModel:
    """
    nu-one-class SVM, RBF kernel, solved by SMO on the dual

        min 1/2 a^T K a   s.t.  0 <= a_i <= 1 / (nu * l),  sum a = 1

    Working pairs use second-order selection; the loop stops once the KKT
    gap falls below `tol`.

    Args:
        samples: (l, d) feature vectors from unchanged regions, l >= 2.
        nu: outlier fraction bound in (0, 1].
        gamma: RBF width; None picks 1 / (d * Var(samples)).

    Returns:
        OcsvmModel keeping only the samples with alpha > 0.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"ocsvm_train needs at least 2 samples as an (l, d) array, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("ocsvm_train samples contain non-finite values")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if gamma is None:
        gamma = scale_gamma(x)
    if not gamma > 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")

    n = x.shape[0]
    upper = 1.0 / (nu * n)
    degenerate = bool(np.all(x == x[0]))

    K = rbf_kernel(x, x, gamma)
    diag = np.diag(K).copy()
    alpha = _initial_alpha(n, upper)
    grad = K @ alpha

    tau = 1e-12
    iterations = 0
    while iterations < max_iter:
        can_up = alpha < upper
        can_down = alpha > 0.0
        if not can_up.any() or not can_down.any():
            break

        # i: most violating index that can grow
        g_up = np.where(can_up, grad, np.inf)
        i = int(np.argmin(g_up))
        g_i = grad[i]

        g_down_max = float(np.max(np.where(can_down, grad, -np.inf)))
        if g_down_max - g_i < tol:
            break

        # j: second-order choice among indices that can shrink
        b = grad - g_i
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0.0, a, tau)
        gain = np.where(can_down & (b > 0.0), (b * b) / a, -np.inf)
        j = int(np.argmax(gain))
        if not np.isfinite(gain[j]):
            break

        delta = b[j] / a[j]
        delta = min(delta, upper - alpha[i], alpha[j])
        if delta <= 0.0:
            break

        alpha[i] += delta
        alpha[j] -= delta
        grad += delta * (K[:, i] - K[:, j])
        iterations += 1

    # clean up round-off at the box edges
    alpha[alpha < 1e-15] = 0.0
    alpha[np.abs(alpha - upper) < 1e-15] = upper

    free = (alpha > 0.0) & (alpha < upper)
    if free.any():
        rho = float(grad[free].mean())
    else:
        at_upper = alpha >= upper
        at_zero = alpha <= 0.0
        lo = float(grad[at_upper].max()) if at_upper.any() else float(grad.min())
        hi = float(grad[at_zero].min()) if at_zero.any() else float(grad.max())
        rho = 0.5 * (lo + hi)

    sv = np.flatnonzero(alpha > 0.0)
    return OcsvmModel(
        support_vectors=x[sv].copy(),
        alpha=alpha[sv].copy(),
        rho=rho,
        gamma=float(gamma),
        nu=float(nu),
        sv_indices=sv.astype(np.int64),
        n_train=n,
        iterations=iterations,
        kkt_violation=_kkt_gap(alpha, grad, upper),
        degenerate=degenerate,
    )


def ocsvm_full_alpha(model: OcsvmModel) -> np.ndarray:
    """Dual vector over the whole training set (zeros off the support)."""
    alpha = np.zeros(model.n_train, dtype=np.float64)
    alpha[model.sv_indices] = model.alpha
    return alpha


def ocsvm_kkt_violation(model: OcsvmModel, samples: np.ndarray) -> float:
    """Recompute the KKT gap of a trained model on its training samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] != model.n_train:
        raise DimensionMismatchError(
            f"Model was trained on {model.n_train} samples, got {x.shape[0]}"
        )
    alpha = ocsvm_full_alpha(model)
    grad = rbf_kernel(x, x, model.gamma) @ alpha
    return _kkt_gap(alpha, grad, model.upper_bound)


# ---------- Training-set selection ----------


def self_training_mask(diff: Image, fraction: float = SELF_TRAINING_FRACTION) -> np.ndarray:
    """
    (H, W) bool mask of the floor(fraction * M) pixels with the smallest
    difference values; ties resolved by raster order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    flat = diff.data[:, :, 0].ravel()
    count = max(2, int(np.floor(fraction * flat.size)))
    order = np.argsort(flat, kind="stable")
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:count]] = True
    return mask.reshape(diff.height, diff.width)


def sample_training_vectors(
    features: np.ndarray,
    mask: np.ndarray,
    max_samples: int = DEFAULT_MAX_TRAIN_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """Feature rows under `mask`, subsampled without replacement past max_samples."""
    if features.shape[:2] != mask.shape:
        raise DimensionMismatchError(f"Mask {mask.shape} does not match features {features.shape[:2]}")
    rows = features.reshape(-1, features.shape[2])
    idx = np.flatnonzero(mask.ravel())
    if idx.size > max_samples:
        stream = derive_stream(seed, PURPOSE_TRAIN_SAMPLES)
        idx = idx[sample_indices(int(idx.size), int(max_samples), stream)]
    return rows[idx]


def ocsvm_detect(model: OcsvmModel, opt: Image, t2: Image, radius: int = DEFAULT_RADIUS) -> ChangeMap:
    """A pixel is change iff f(features) < 0."""
    require_same_size(opt, t2, "ocsvm_detect")
    feats = pixel_features(opt, t2, radius)
    scores = model.decision_function(feats.reshape(-1, feats.shape[2]))
    return ChangeMap.from_bits((scores < 0.0).reshape(opt.height, opt.width))


# ---------- One-call detector ----------


@dataclass(frozen=True)
class DetectionResult:
    change_map: ChangeMap
    method: str
    threshold: Optional[float] = None
    model: Optional[OcsvmModel] = None
    self_trained: bool = False
    train_samples: int = 0


def detect_changes(
    pre: Image,
    post: Image,
    method: str = "otsu",
    *,
    nu: float = DEFAULT_NU,
    gamma: Optional[float] = None,
    radius: int = DEFAULT_RADIUS,
    max_train_samples: int = DEFAULT_MAX_TRAIN_SAMPLES,
    train_mask: Optional[np.ndarray] = None,
    seed: int = 0,
) -> DetectionResult:
    """
    Run the Otsu or OCSVM detector on a pre / post pair.

    Pairs with different channel counts are compared after band
    replication. OCSVM without `train_mask` falls back to the self-training
    heuristic and says so on stdout.
    """
    require_same_size(pre, post, "detect_changes")
    if pre.channels != post.channels:
        pre, post = to_rgb(pre), to_rgb(post)

    if method == "otsu":
        threshold, change_map = otsu_threshold(difference_image(pre, post))
        return DetectionResult(change_map=change_map, method=method, threshold=threshold)

    if method != "ocsvm":
        raise ValueError(f"Unknown detection method {method!r}; expected 'otsu' or 'ocsvm'")

    feats = pixel_features(pre, post, radius)
    self_trained = train_mask is None
    if self_trained:
        print(
            "notice: no training mask given; training the OCSVM on the "
            f"{int(SELF_TRAINING_FRACTION * 100)}% of pixels with the smallest difference"
        )
        train_mask = self_training_mask(difference_image(pre, post))
    elif train_mask.shape != (pre.height, pre.width):
        raise DimensionMismatchError(
            f"Training mask {train_mask.shape} does not match the image {pre.height} x {pre.width}"
        )

    samples = sample_training_vectors(feats, np.asarray(train_mask, dtype=bool), max_train_samples, seed)
    if samples.shape[0] < 2:
        raise ValueError(f"OCSVM needs at least 2 training pixels, the mask selects {samples.shape[0]}")

    model = ocsvm_train(samples, nu=nu, gamma=gamma)
    scores = model.decision_function(feats.reshape(-1, feats.shape[2]))
    change_map = ChangeMap.from_bits((scores < 0.0).reshape(pre.height, pre.width))
    return DetectionResult(
        change_map=change_map,
        method=method,
        model=model,
        self_trained=self_trained,
        train_samples=int(samples.shape[0]),
    )
