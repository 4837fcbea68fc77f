"""Exemplar-free analytic classifier.

A fixed random projector lifts pooled features to D_proj dimensions;
ridge-regression weights over the lifted features are maintained
recursively, one batch at a time, through the Woodbury identity. The
state is (R, W_hat) only: no sample is ever retained, and any sequence
of batch updates lands on the same weights as the closed-form solve
over the concatenated data. Label space grows by zero columns, the
unique padding that preserves that equivalence.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .base import ParamsMixin
from .errors import ConfigError, NumericalError, ShapeError, StateError
from .numerics import rng
from .validation import check_features, check_labels


@dataclass
class Projector:
    w: np.ndarray  # (D, D_proj)
    seed: int


def init_projector(dim: int, proj_dim: int, seed: int) -> Projector:
    if proj_dim < dim:
        warnings.warn(
            f"projection dim {proj_dim} below feature dim {dim}; "
            "the random lift usually widens", stacklevel=2)
    w = rng.stream(seed, "projector").normal(
        0.0, 1.0 / np.sqrt(dim), size=(dim, proj_dim))
    return Projector(w=w, seed=seed)


def project(projector: Projector, z: np.ndarray,
            nonlinearity: str = "none") -> np.ndarray:
    z = check_features(z, dim=projector.w.shape[0], name="Z")
    out = z @ projector.w
    if nonlinearity == "relu":
        out = np.maximum(out, 0.0)
    elif nonlinearity != "none":
        raise ConfigError(f"unknown projection nonlinearity {nonlinearity!r}")
    return out


@dataclass
class AnalyticState:
    r: np.ndarray      # (D_proj, D_proj) running inverse
    w_hat: np.ndarray  # (D_proj, C)
    gamma: float
    seen: int = 0

    @property
    def n_classes(self) -> int:
        return self.w_hat.shape[1]

    def copy(self) -> "AnalyticState":
        return AnalyticState(self.r.copy(), self.w_hat.copy(), self.gamma, self.seen)


def init_state(proj_dim: int, gamma: float) -> AnalyticState:
    if gamma <= 0:
        raise ConfigError(f"ridge term must be positive, got {gamma}")
    return AnalyticState(
        r=np.eye(proj_dim) / gamma,
        w_hat=np.zeros((proj_dim, 0)),
        gamma=float(gamma),
    )


def expand_labels(state: AnalyticState, new_classes: int) -> AnalyticState:
    """Grow the label space by zero columns; R is untouched."""
    if new_classes < 0:
        raise ConfigError(f"new class count must be >= 0, got {new_classes}")
    if new_classes:
        state.w_hat = np.hstack(
            [state.w_hat, np.zeros((state.w_hat.shape[0], new_classes))])
    return state


def update(state: AnalyticState, zhat: np.ndarray, y: np.ndarray) -> AnalyticState:
    """One recursive ridge step on a batch of projected features.

    R' = R - R Zᵀ (I_N + Z R Zᵀ)⁻¹ Z R, then symmetrized;
    W' = W - R' Zᵀ Z W + R' Zᵀ Y.
    """
    zhat = check_features(zhat, dim=state.r.shape[0], name="Zhat")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != zhat.shape[0]:
        raise ShapeError(f"label matrix shape {y.shape} does not match batch")
    if y.shape[1] != state.n_classes:
        raise ShapeError(
            f"label width {y.shape[1]} != state classes {state.n_classes}; "
            "call expand_labels first")
    n = zhat.shape[0]
    if n == 0:
        return state
    k = state.r @ zhat.T                      # (D_proj, N)
    inner = np.eye(n) + zhat @ k              # I_N + Z R Zᵀ, SPD in exact math
    try:
        factor = scipy.linalg.cho_factor((inner + inner.T) / 2.0, lower=True,
                                         check_finite=False)
        solved = scipy.linalg.cho_solve(factor, k.T, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(inner))
        raise NumericalError(
            f"analytic update: inner system not invertible "
            f"(cond ~ {cond:.3e})") from exc
    r_new = state.r - k @ solved
    state.r = (r_new + r_new.T) / 2.0
    zt = zhat.T
    state.w_hat = state.w_hat - state.r @ (zt @ (zhat @ state.w_hat)) \
        + state.r @ (zt @ y)
    state.seen += n
    return state


def predict(state: AnalyticState, projector: Projector, z: np.ndarray,
            nonlinearity: str = "none") -> tuple[int, np.ndarray]:
    """Class column and score vector for one feature; ties -> lowest column."""
    if state.n_classes == 0:
        raise StateError("predict before any class was registered")
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    scores = project(projector, z, nonlinearity) @ state.w_hat
    return int(np.argmax(scores[0])), scores[0]


def batch_ridge(zhat: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """Closed-form (ZᵀZ + γI)⁻¹ ZᵀY; the oracle the recursion must match."""
    d = zhat.shape[1]
    return np.linalg.solve(zhat.T @ zhat + gamma * np.eye(d), zhat.T @ y)


class AnalyticClassifier(ParamsMixin):
    """Estimator facade over the recursive state.

    Operates on feature tables (n_samples, dim). Classes may arrive
    incrementally through partial_fit; predictions are expressed in the
    caller's label vocabulary, never in column indexes.
    """

    def __init__(self, dim: int, proj_dim: int = 256, gamma: float = 1.0,
                 seed: int = 0, nonlinearity: str = "none"):
        self.dim = dim
        self.proj_dim = proj_dim
        self.gamma = gamma
        self.seed = seed
        self.nonlinearity = nonlinearity

    def _reset(self):
        self.projector_ = init_projector(self.dim, self.proj_dim, self.seed)
        self.state_ = init_state(self.proj_dim, self.gamma)
        self.classes_ = np.empty(0, dtype=np.int64)

    def fit(self, z, y):
        self._reset()
        return self.partial_fit(z, y)

    def partial_fit(self, z, y):
        if not hasattr(self, "state_"):
            self._reset()
        z = check_features(z, dim=self.dim)
        y = check_labels(y, z.shape[0])
        known = set(self.classes_.tolist())
        fresh = sorted(set(y.tolist()) - known)
        if fresh:
            self.classes_ = np.concatenate(
                [self.classes_, np.asarray(fresh, dtype=np.int64)])
            expand_labels(self.state_, len(fresh))
        col = {c: j for j, c in enumerate(self.classes_.tolist())}
        onehot = np.zeros((z.shape[0], self.classes_.shape[0]))
        for i, label in enumerate(y.tolist()):
            onehot[i, col[label]] = 1.0
        zhat = project(self.projector_, z, self.nonlinearity)
        update(self.state_, zhat, onehot)
        return self

    def decision_function(self, z) -> np.ndarray:
        if not hasattr(self, "state_") or self.state_.n_classes == 0:
            raise StateError("classifier has no fitted classes")
        z = check_features(z, dim=self.dim)
        return project(self.projector_, z, self.nonlinearity) @ self.state_.w_hat

    def predict(self, z) -> np.ndarray:
        scores = self.decision_function(z)
        best = np.argmax(scores, axis=1)
        # exact score ties resolve to the lowest class id, not column order
        out = self.classes_[best].copy()
        for i in np.flatnonzero(
                np.sum(scores == scores[np.arange(len(best)), best][:, None],
                       axis=1) > 1):
            tied = np.flatnonzero(scores[i] == scores[i, best[i]])
            out[i] = int(self.classes_[tied].min())
        return out
