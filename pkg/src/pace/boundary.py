"""Boundary-aware regularization: masking, detection, margin loss.

Samples whose class flips under mild time-frequency masking sit near a
decision boundary. Detection runs a temporary model (previous backbone,
closed-form session head) over masked variants of each current-session
sample; qualifying samples contribute their previous-model feature as a
repulsion anchor. During adaptation each sample is pulled, together
with its masked variants, toward its class centroid and pushed past a
margin from the nearest anchor.

Features entering any distance here are L2-normalized, which makes the
margin scale-free.
"""

from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraBank
from .backbone import BackboneWeights, features, frozen_site_delta
from .errors import ConfigError, ShapeError
from .numerics import autodiff as ad
from .numerics import rng
from .numerics.linalg import solve_spd
from .training import LinearHead


@dataclass(frozen=True)
class MaskSpec:
    max_time_ratio: float = 0.5
    max_freq_ratio: float = 0.5
    count: int = 20  # N_p variants per sample
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.max_time_ratio <= 1.0:
            raise ConfigError(f"time mask ratio {self.max_time_ratio} outside [0, 1]")
        if not 0.0 <= self.max_freq_ratio <= 1.0:
            raise ConfigError(f"freq mask ratio {self.max_freq_ratio} outside [0, 1]")
        if self.count < 1:
            raise ConfigError("perturbation count must be >= 1")


@dataclass(frozen=True)
class RegConfig:
    margin: float = 0.25
    weight: float = 1.0
    misclass_rate: float = 0.3  # boundary membership threshold on flip rate
    variants_per_step: int = 4  # stochastic subsample of S_i per step; 0 = all

    def validate(self) -> None:
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.weight < 0:
            raise ConfigError(f"regularizer weight must be >= 0, got {self.weight}")
        if self.variants_per_step < 0:
            raise ConfigError("variant subsample count must be >= 0")


def apply_mask(x: np.ndarray, r_t: float, r_f: float,
               t_start: int, f_start: int) -> np.ndarray:
    """Zero one contiguous time band of width floor(r_t*T) and one
    contiguous frequency band of width floor(r_f*F)."""
    out = np.array(x, dtype=np.float64)
    t_width = int(np.floor(r_t * out.shape[0]))
    f_width = int(np.floor(r_f * out.shape[1]))
    if t_width:
        out[t_start:t_start + t_width, :] = 0.0
    if f_width:
        out[:, f_start:f_start + f_width] = 0.0
    return out


def perturb(x: np.ndarray, spec: MaskSpec,
            gen: np.random.Generator) -> np.ndarray:
    """N_p masked variants of one clip; draws come from `gen` so callers
    control the per-sample stream."""
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"perturb expects one (T, F) clip, got {x.shape}")
    t_dim, f_dim = x.shape
    out = np.empty((spec.count, t_dim, f_dim))
    for k in range(spec.count):
        # half-open at zero: a positive max ratio always masks something
        r_t = spec.max_time_ratio * (1.0 - gen.uniform()) \
            if spec.max_time_ratio > 0 else 0.0
        r_f = spec.max_freq_ratio * (1.0 - gen.uniform()) \
            if spec.max_freq_ratio > 0 else 0.0
        t_width = int(np.floor(r_t * t_dim))
        f_width = int(np.floor(r_f * f_dim))
        t_start = int(gen.integers(0, t_dim - t_width + 1))
        f_start = int(gen.integers(0, f_dim - f_width + 1))
        out[k] = apply_mask(x, r_t, r_f, t_start, f_start)
    return out


def perturbation_sets(clips: np.ndarray, spec: MaskSpec,
                      session: int) -> np.ndarray:
    """Fixed variants for a whole session, (N, N_p, T, F); sample i draws
    from its own stream so the set is stable across epochs and resumes."""
    clips = np.asarray(clips, dtype=np.float64)
    out = np.empty((clips.shape[0], spec.count) + clips.shape[1:])
    for i in range(clips.shape[0]):
        gen = rng.stream(spec.seed, f"mask/s{session}/{i}")
        out[i] = perturb(clips[i], spec, gen)
    return out


def normalize_rows(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ShapeError("cannot normalize a zero feature row")
    return f / norms


@dataclass
class TempModel:
    """Previous-session backbone, bit-frozen, with a fresh session head."""
    weights: BackboneWeights
    bank: LoraBank
    head: LinearHead
    classes: tuple[int, ...]

    def feature(self, clips: np.ndarray) -> np.ndarray:
        return features(self.weights, None, clips,
                        site_delta=frozen_site_delta(self.bank))

    def predict_local(self, clips: np.ndarray) -> np.ndarray:
        return self.head.predict(self.feature(clips))


def build_temp_model(weights: BackboneWeights, bank: LoraBank,
                     x: np.ndarray, y: np.ndarray, classes,
                     gamma: float = 1.0,
                     variants: np.ndarray | None = None) -> TempModel:
    """Head fitted in closed form (ridge to one-hot targets) over the
    session's classes on frozen previous-model features. Detection quality
    hinges on this head: it must separate the clean session data exactly
    (hence a closed-form fit, not a few SGD steps), and, when the masked
    variants are supplied, stay consistent under masking, so that variant
    flips point at fragile samples rather than at a mask-naive head."""
    classes = tuple(int(c) for c in classes)
    col = {c: j for j, c in enumerate(classes)}
    y_local = np.array([col[int(label)] for label in y], dtype=np.int64)
    sd = frozen_site_delta(bank)
    feats = features(weights, None, x, site_delta=sd)
    onehot = np.eye(len(classes))[y_local]
    if variants is not None:
        flat = np.asarray(variants, dtype=np.float64)
        n, n_p = flat.shape[0], flat.shape[1]
        vfeats = features(weights, None, flat.reshape((n * n_p,) + flat.shape[2:]),
                          site_delta=sd)
        feats = np.vstack([feats, vfeats])
        onehot = np.vstack([onehot, np.repeat(onehot[:n], n_p, axis=0)])
    mean = feats.mean(axis=0, keepdims=True)
    centered = feats - mean
    gram = centered.T @ centered + gamma * np.eye(feats.shape[1])
    w = solve_spd(gram, centered.T @ onehot)
    head = LinearHead(w=w, b=onehot.mean(axis=0, keepdims=True) - mean @ w)
    return TempModel(weights, bank, head, classes)


@dataclass
class BoundarySet:
    features: np.ndarray  # (B, D), L2-normalized previous-model features
    source_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.features.shape[0]


def detect_boundary(temp: TempModel, x: np.ndarray, y: np.ndarray,
                    variants: np.ndarray, rate_threshold: float) -> BoundarySet:
    """Samples whose masked variants flip class more often than the
    threshold; stores their normalized previous-model features."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    col = {c: j for j, c in enumerate(temp.classes)}
    keep_feats, keep_ids = [], []
    for i in range(x.shape[0]):
        pred = temp.predict_local(variants[i])
        rate = float(np.mean(pred != col[int(y[i])]))
        if rate > rate_threshold:
            keep_feats.append(temp.feature(x[i:i + 1])[0])
            keep_ids.append(i)
    if keep_feats:
        feats = normalize_rows(np.stack(keep_feats))
    else:
        feats = np.empty((0, temp.weights.config.dim))
    return BoundarySet(features=feats, source_ids=keep_ids)


def reg_loss(s_features: list[ad.Node], centroid: np.ndarray,
             boundary: BoundarySet, margin: float) -> ad.Node:
    """Margin loss for one sample's set S = {clean, variants...}:

        max(0, margin + mean_u ||f(u) - mu||^2 - min_b ||f(clean) - b||^2)

    All features are normalized nodes; the clean sample is s_features[0].
    The min picks its achieving anchor by current value (ties -> lowest
    index) and differentiates through that branch only.
    """
    if len(boundary) == 0:
        return ad.constant(np.zeros((1, 1)))
    centroid = np.asarray(centroid, dtype=np.float64).reshape(1, -1)
    disp = None
    for node in s_features:
        term = ad.squared_distance(node, centroid)
        disp = term if disp is None else ad.add(disp, term)
    disp = ad.scale(disp, 1.0 / len(s_features))
    clean = s_features[0]
    dists = np.sum((clean.value - boundary.features) ** 2, axis=1)
    nearest = int(np.argmin(dists))
    repel = ad.squared_distance(clean, boundary.features[nearest:nearest + 1])
    inner = ad.add(ad.sub(disp, repel), np.full((1, 1), margin))
    return ad.hinge(inner)


def total_loss(ce: ad.Node, reg_terms: list[ad.Node], weight: float) -> ad.Node:
    """ce + weight * mean(reg)."""
    if weight < 0:
        raise ConfigError(f"regularizer weight must be >= 0, got {weight}")
    if not reg_terms or weight == 0.0:
        return ce
    total = None
    for term in reg_terms:
        total = term if total is None else ad.add(total, term)
    return ad.add(ce, ad.scale(total, weight / len(reg_terms)))
