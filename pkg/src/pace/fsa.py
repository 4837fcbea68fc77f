"""First-session adaptation: probe, drift gate, warm-up, gated tuning.

The first session is where the pretrained encoder meets the target
domain, and tuning everything at one rate wrecks its lower layers. The
pipeline here runs a throwaway probe (adapters at every site, trained
naively), measures per-layer representation drift against the pristine
encoder with linear CKA, and tunes only the layers past the shallowest
one whose similarity fell below the gate. The head is warmed up first
at a slow rate, then frozen while the backbone adapts; the parametric
head is discarded entirely at handover to the analytic classifier.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraBank
from .analytic import AnalyticState, Projector, expand_labels, init_state, \
    project, update
from .backbone import BackboneWeights, bank_site_delta, encode, features, \
    lora_sites
from .errors import ConfigError, NumericalError, ShapeError
from .training import LinearHead, fresh_head, train_head_on_features, \
    train_lora_ce


@dataclass(frozen=True)
class FsaConfig:
    eta_bb: float = 0.05
    eta_head: float = 0.01
    epochs: int = 40       # probe and adaptation epochs E0
    head_epochs: int = 1
    rho_layer: float = 0.94
    batch_size: int = 24
    rank: int = 4
    momentum: float = 0.0  # spare knob; the reference recipe is plain SGD

    def validate(self) -> None:
        if self.eta_bb <= 0 or self.eta_head <= 0:
            raise ConfigError("learning rates must be positive")
        if self.eta_head >= self.eta_bb:
            raise ConfigError(
                f"head rate {self.eta_head} must stay below backbone rate "
                f"{self.eta_bb}; the stage split depends on the imbalance")
        if not 0.0 < self.rho_layer <= 1.0:
            raise ConfigError(f"drift gate must be in (0, 1], got {self.rho_layer}")
        if self.epochs < 0 or self.head_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


@dataclass
class CkaProfile:
    values: tuple[float, ...]  # s^k for k = 1..L
    l_tune: int | None = None

    @property
    def layers(self) -> int:
        return len(self.values)


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Column-centered linear CKA between two (N, D) activation tables.

    Invariant to orthogonal transforms and isotropic scaling. Inputs
    where every column is constant carry no comparable structure: two
    such inputs are defined as perfectly similar, one alone is an error.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"cka: incompatible shapes {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise ShapeError("cka needs at least 2 rows")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx == 0.0 and yy == 0.0:
        return 1.0
    if xx == 0.0 or yy == 0.0:
        raise NumericalError("cka: one input is degenerate (all-constant columns)")
    cross = np.linalg.norm(yc.T @ xc)
    return float(cross * cross / (xx * yy))


def pooled_layer_activations(weights: BackboneWeights, bank: LoraBank | None,
                             clips: np.ndarray, site_delta=None) -> list[np.ndarray]:
    """Token-mean-pooled output activation per layer: L tables of (N, D)."""
    if site_delta is None and bank is not None:
        site_delta = bank_site_delta(bank)
    clips = np.asarray(clips, dtype=np.float64)
    n = clips.shape[0]
    out = [np.empty((n, weights.config.dim)) for _ in range(weights.config.layers)]
    for i in range(n):
        enc = encode(weights, clips[i], site_delta=site_delta)
        for k, node in enumerate(enc.layer_outputs):
            out[k][i] = node.value.mean(axis=0)
    return out


def probe_full_peft(weights: BackboneWeights, x: np.ndarray, y_local: np.ndarray,
                    n_classes: int, config: FsaConfig, seed: int) -> CkaProfile:
    """Throwaway tuning pass at every site to see which layers move; the
    probe head runs at the head rate so the backbone has to carry the
    fit. Works on copies; `weights` is untouched on return."""
    config.validate()
    base = pooled_layer_activations(weights, None, x)
    if config.epochs == 0:
        return CkaProfile(values=tuple(1.0 for _ in base))
    probe_weights = weights.copy()
    probe_bank = LoraBank()
    probe_bank.spawn(lora_sites(probe_weights), session=1, rank=config.rank,
                     seed=seed)
    head = fresh_head(weights.config.dim, n_classes)
    train_lora_ce(probe_weights, probe_bank, head, x, y_local,
                  epochs=config.epochs, lr=config.eta_bb,
                  batch_size=config.batch_size, seed=seed, tag="probe",
                  train_head=True, head_lr=config.eta_head,
                  momentum=config.momentum)
    probed = pooled_layer_activations(probe_weights, probe_bank, x)
    return CkaProfile(values=tuple(linear_cka(p, b) for p, b in zip(probed, base)))


def select_tune_boundary(profile: CkaProfile, rho_layer: float) -> int:
    """Shallowest layer whose similarity fell below the gate; L+1 if none."""
    for k, s in enumerate(profile.values, start=1):
        if s < rho_layer:
            profile.l_tune = k
            return k
    profile.l_tune = profile.layers + 1
    return profile.l_tune


def head_warmup(weights: BackboneWeights, bank: LoraBank | None,
                head: LinearHead, x: np.ndarray, y_local: np.ndarray,
                config: FsaConfig, seed: int) -> list[float]:
    """Train only the head, briefly and slowly, on frozen-backbone features."""
    feats = features(weights, bank, x)
    return train_head_on_features(head, feats, y_local,
                                  epochs=config.head_epochs, lr=config.eta_head,
                                  batch_size=config.batch_size, seed=seed,
                                  tag="warmup")


def backbone_adapt(weights: BackboneWeights, bank: LoraBank, head: LinearHead,
                   x: np.ndarray, y_local: np.ndarray, config: FsaConfig,
                   l_tune: int, seed: int) -> list[float]:
    """Session-1 adapter training at sites of layers >= l_tune, head frozen."""
    sites = [s for s in lora_sites(weights) if s.layer >= l_tune]
    if not sites:
        return []
    bank.spawn(sites, session=1, rank=config.rank, seed=seed)
    return train_lora_ce(weights, bank, head, x, y_local,
                         epochs=config.epochs, lr=config.eta_bb,
                         batch_size=config.batch_size, seed=seed, tag="adapt",
                         train_head=False, momentum=config.momentum)


def finalize_analytic(weights: BackboneWeights, bank: LoraBank | None,
                      projector: Projector, gamma: float, x: np.ndarray,
                      y: np.ndarray,
                      nonlinearity: str = "none") -> tuple[AnalyticState, np.ndarray]:
    """Handover: push session features into a fresh analytic state.

    Returns (state, classes); column j of the state corresponds to
    classes[j] (sorted session label set). The parametric head plays no
    part from here on.
    """
    feats = features(weights, bank, x)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    classes = np.unique(y)
    state = init_state(projector.w.shape[1], gamma)
    expand_labels(state, classes.shape[0])
    col = {c: j for j, c in enumerate(classes.tolist())}
    onehot = np.zeros((feats.shape[0], classes.shape[0]))
    for i, label in enumerate(y.tolist()):
        onehot[i, col[label]] = 1.0
    update(state, project(projector, feats, nonlinearity), onehot)
    return state, classes


@dataclass
class FsaReport:
    cka: tuple[float, ...] = ()
    l_tune: int | None = None
    warmup_losses: list[float] = field(default_factory=list)
    adapt_losses: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "cka": list(self.cka),
            "l_tune": self.l_tune,
            "warmup_losses": self.warmup_losses,
            "adapt_losses": self.adapt_losses,
        }, sort_keys=True)
