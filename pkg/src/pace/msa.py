"""Multi-session adaptation: subspace-orthogonal LoRA under a sample budget.

Sessions after the first keep adapting until the cumulative sample count
passes a stopping budget; past that point the backbone freezes and only
the analytic head keeps learning. While adaptation runs, each tunable
site gets a principal subspace of its input activations under the
"unlearned" weights (pretrained minus every frozen delta), and A-factor
gradients are projected onto that subspace along the input dimension.
First-order consequence: directions outside the subspace pass through
the fresh adapter unchanged, which is what keeps earlier sessions'
features in place without storing any of their data.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraBank, SiteKey
from .backbone import BackboneWeights, encode, features, lora_sites, \
    unlearned_site_delta
from .boundary import BoundarySet, MaskSpec, RegConfig, build_temp_model, \
    detect_boundary, perturbation_sets, reg_loss
from .errors import ConfigError, ShapeError, StateError
from .numerics import autodiff as ad
from .numerics import rng, sym_eig
from .training import fresh_head, train_head_on_features, train_lora_ce

FSA, MSA, FROZEN = "FSA", "MSA", "FROZEN"


@dataclass(frozen=True)
class MsaConfig:
    rho_svd: float = 0.99
    n_stop: int = 220
    eta_bb: float = 0.05
    epochs: int = 4
    batch_size: int = 24
    rank: int = 4
    momentum: float = 0.0  # spare knob; the reference recipe is plain SGD

    def validate(self) -> None:
        if not 0.0 < self.rho_svd < 1.0:
            raise ConfigError(f"energy cut must be in (0, 1), got {self.rho_svd}")
        if self.n_stop < 1:
            raise ConfigError(f"sample budget must be >= 1, got {self.n_stop}")
        if self.eta_bb <= 0:
            raise ConfigError("backbone rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("bad epoch count or batch size")


def compute_t3(session_counts, n_stop: int) -> int:
    """Smallest t whose cumulative sample count exceeds the budget; if the
    whole stream stays within budget, adaptation simply never stops early."""
    counts = [int(c) for c in session_counts]
    if any(c <= 0 for c in counts):
        raise ConfigError("session sample counts must be positive")
    total = 0
    for t, c in enumerate(counts, start=1):
        total += c
        if total > n_stop:
            return t
    warnings.warn(
        f"total samples {total} never exceed the budget {n_stop}; "
        "adaptation runs through the final session", stacklevel=2)
    return len(counts)


def stage_for(session: int, t3: int) -> str:
    if session < 1:
        raise ConfigError(f"sessions are 1-based, got {session}")
    if session == 1:
        return FSA
    return MSA if session <= t3 else FROZEN


@dataclass
class ProjectionBasis:
    site: SiteKey
    u: np.ndarray  # (d, m), orthonormal columns
    kept_energy: float
    eigenvalues: np.ndarray  # full spectrum, descending

    @property
    def m(self) -> int:
        return self.u.shape[1]


def session_subspace(weights: BackboneWeights, bank: LoraBank,
                     clips: np.ndarray, site: SiteKey,
                     rho_svd: float) -> ProjectionBasis:
    """Principal subspace of a site's input activations under the unlearned
    weights; the cut keeps the smallest prefix with energy fraction
    strictly above rho_svd."""
    h = site_input_activations(weights, bank, clips)[site]
    return basis_from_activations(site, h, rho_svd)


def site_input_activations(weights: BackboneWeights, bank: LoraBank,
                           clips: np.ndarray) -> dict[SiteKey, np.ndarray]:
    """Per-token input activations at every attach site, all clips stacked,
    evaluated under the unlearned weights (one pass per clip)."""
    clips = np.asarray(clips, dtype=np.float64)
    sd = unlearned_site_delta(bank)
    rows: dict[SiteKey, list[np.ndarray]] = {}
    for i in range(clips.shape[0]):
        enc = encode(weights, clips[i], site_delta=sd)
        for key, node in enc.site_inputs.items():
            rows.setdefault(key, []).append(node.value)
    return {key: np.vstack(chunks) for key, chunks in rows.items()}


def basis_from_activations(site: SiteKey, h: np.ndarray,
                           rho_svd: float) -> ProjectionBasis:
    d = h.shape[1]
    cov = h.T @ h
    total = float(np.trace(cov))
    if total <= 0.0:
        warnings.warn(f"site {site}: zero activation covariance, "
                      "keeping the full space", stacklevel=2)
        return ProjectionBasis(site, np.eye(d), 1.0, np.zeros(d))
    evals, evecs = sym_eig((cov + cov.T) / 2.0)
    energy = np.clip(evals, 0.0, None)
    frac = np.cumsum(energy) / energy.sum()
    m = int(np.argmax(frac > rho_svd)) + 1 if np.any(frac > rho_svd) else d
    return ProjectionBasis(site, evecs[:, :m], float(frac[m - 1]), evals)


def project_gradient(g: np.ndarray, basis: ProjectionBasis) -> np.ndarray:
    """Right-projection g @ (U Uᵀ): the input dimension is the trailing
    axis. Idempotent; annihilates rows orthogonal to the subspace."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != basis.u.shape[0]:
        raise ShapeError(
            f"project_gradient: trailing dim {g.shape} vs basis "
            f"{basis.u.shape[0]}")
    return (g @ basis.u) @ basis.u.T


@dataclass
class MsaReport:
    session: int
    bases: list[dict] = field(default_factory=list)
    boundary_size: int = 0
    boundary_by_class: dict[int, int] = field(default_factory=dict)
    warmup_losses: list[float] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "session": self.session,
            "bases": self.bases,
            "boundary_size": self.boundary_size,
            "boundary_by_class": {str(k): v for k, v
                                  in sorted(self.boundary_by_class.items())},
            "warmup_losses": self.warmup_losses,
            "train_losses": self.train_losses,
        }, sort_keys=True)


def msa_session(weights: BackboneWeights, bank: LoraBank, clf,
                x: np.ndarray, y: np.ndarray, session: int, t3: int,
                l_tune: int, config: MsaConfig, eta_head: float,
                mask_spec: MaskSpec | None, reg: RegConfig | None,
                use_projection: bool, seed: int) -> MsaReport:
    """One adaptation session: bases, fresh adapters, warm head, projected
    SGD with optional boundary regularization, freeze, analytic ingest.

    clf is the running AnalyticClassifier; its label registry absorbs the
    session's classes. Returns the session report.
    """
    config.validate()
    if stage_for(session, t3) != MSA:
        raise StateError(
            f"session {session} is {stage_for(session, t3)} under t3={t3}, "
            "not an adaptation session")
    if bank.unfrozen():
        raise StateError("previous session's adapters are still unfrozen")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    report = MsaReport(session=session)
    classes = sorted(int(c) for c in set(y.tolist()))
    col = {c: j for j, c in enumerate(classes)}
    y_local = np.array([col[int(label)] for label in y], dtype=np.int64)

    sites = [s for s in lora_sites(weights) if s.layer >= l_tune]
    if sites:
        bases: dict[SiteKey, ProjectionBasis] = {}
        if use_projection:
            acts = site_input_activations(weights, bank, x)
            for site in sites:
                basis = basis_from_activations(site.key, acts[site.key],
                                               config.rho_svd)
                bases[site.key] = basis
                report.bases.append({
                    "site": f"{site.layer}/{site.name}",
                    "m": basis.m,
                    "kept_energy": basis.kept_energy,
                    "eigenvalues": [float(v) for v in basis.eigenvalues],
                })

        boundary = BoundarySet(features=np.empty((0, weights.config.dim)))
        variants = None
        reg_enabled = (reg is not None and reg.weight > 0.0
                       and mask_spec is not None)
        if reg_enabled:
            variants = perturbation_sets(x, mask_spec, session)
            temp = build_temp_model(weights, bank, x, y, classes,
                                    variants=variants)
            boundary = detect_boundary(temp, x, y, variants,
                                       reg.misclass_rate)
            report.boundary_size = len(boundary)
            for i in boundary.source_ids:
                c = int(y[i])
                report.boundary_by_class[c] = report.boundary_by_class.get(c, 0) + 1

        bank.spawn(sites, session=session, rank=config.rank,
                   seed=seed + session)
        head = fresh_head(weights.config.dim, len(classes))
        report.warmup_losses = train_head_on_features(
            head, features(weights, bank, x), y_local, epochs=1,
            lr=eta_head, batch_size=config.batch_size, seed=seed,
            tag=f"msa/warm/s{session}")

        centroids: dict[int, np.ndarray] = {}
        epoch_box = [0]

        def refresh_centroids(epoch: int) -> None:
            epoch_box[0] = epoch
            feats = features(weights, bank, x)
            normed = feats / np.linalg.norm(feats, axis=1, keepdims=True)
            for c in classes:
                centroids[c] = normed[y == c].mean(axis=0)

        def extra_term(i: int, sd, enc) -> ad.Node | None:
            if not reg_enabled or len(boundary) == 0:
                return None
            n_p = variants.shape[1]
            k_sub = reg.variants_per_step or n_p
            if k_sub < n_p:
                picks = rng.stream(
                    seed, f"msa/regsub/s{session}/{epoch_box[0]}/{i}"
                ).choice(n_p, size=k_sub, replace=False)
            else:
                picks = range(n_p)
            s_nodes = [ad.l2_normalize(enc.pooled)]
            for k in picks:
                enc_v = encode(weights, variants[i, int(k)], site_delta=sd)
                s_nodes.append(ad.l2_normalize(enc_v.pooled))
            term = reg_loss(s_nodes, centroids[int(y[i])], boundary,
                            reg.margin)
            return ad.scale(term, reg.weight)

        def grad_filter(name: str, g: np.ndarray) -> np.ndarray:
            if not use_projection or not name.endswith("/a"):
                return g
            _, layer, site_name, _sess, _ = name.split("/")
            basis = bases.get((int(layer), site_name))
            if basis is None:
                return g
            return project_gradient(g.T, basis).T

        report.train_losses = train_lora_ce(
            weights, bank, head, x, y_local,
            epochs=config.epochs, lr=config.eta_bb,
            batch_size=config.batch_size, seed=seed, tag=f"msa/s{session}",
            train_head=False, grad_filter=grad_filter,
            epoch_hook=refresh_centroids if reg_enabled else None,
            extra_term=extra_term, momentum=config.momentum)
        bank.freeze_session(session)

    clf.partial_fit(features(weights, bank, x), y)
    return report
