"""Continual-run orchestration, accuracy matrix, and reported metrics.

Seven methods share one harness:

  pace             staged pipeline: gated first-session adaptation, then
                   subspace-projected adaptation under the sample budget,
                   then frozen backbone; analytic head throughout
  fsa-analytic     first-session adaptation only, analytic head
  frozen-analytic  no adaptation at all, analytic head on frozen features
  naive-seq-ft     per-session LoRA + growing CE head, no protection
  ncm              nearest class mean on frozen features
  ncm-fsa          nearest class mean after first-session adaptation
  joint            one LoRA + head training pass over all sessions' data

After every training session the model is evaluated on each seen
session's test set, filling a lower-triangular accuracy matrix; the
derived metrics all recompute from that matrix. A fixed probe set is
re-featurized after every session for the representation-shift trace.
"""

import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraAdapter, LoraBank
from .analytic import AnalyticClassifier, AnalyticState, Projector
from .backbone import BackboneWeights, features, init_pretrained, lora_sites, \
    pretrain_surrogate
from .base import ParamsMixin
from .config import RunConfig, flatten
from .data import SessionData, pretext_clips
from .errors import ConfigError, StateError
from .fsa import FsaReport, backbone_adapt, head_warmup, probe_full_peft, \
    select_tune_boundary
from .msa import FROZEN, FSA, MSA, MsaReport, compute_t3, msa_session, \
    stage_for
from .persist import read_bundle, write_bundle
from .training import fresh_head, train_lora_ce
from .validation import check_features, check_labels

METHODS = ("pace", "fsa-analytic", "frozen-analytic", "naive-seq-ft",
           "ncm", "ncm-fsa", "joint")


@dataclass
class AccuracyMatrix:
    """a[t][i]: accuracy on session-i test data after training session t."""
    values: np.ndarray        # (T, T), NaN where unfilled
    test_sizes: tuple[int, ...]

    @classmethod
    def empty(cls, sizes) -> "AccuracyMatrix":
        t = len(sizes)
        return cls(np.full((t, t), np.nan), tuple(int(s) for s in sizes))

    @property
    def sessions(self) -> int:
        return self.values.shape[0]

    def set(self, t: int, i: int, acc: float) -> None:
        if not 1 <= i <= t <= self.sessions:
            raise ConfigError(f"cell ({t}, {i}) outside the lower triangle")
        self.values[t - 1, i - 1] = float(acc)

    def get(self, t: int, i: int) -> float:
        return float(self.values[t - 1, i - 1])

    def row_filled(self, t: int) -> bool:
        return bool(np.all(np.isfinite(self.values[t - 1, :t])))

    def filled_rows(self) -> list[int]:
        return [t for t in range(1, self.sessions + 1) if self.row_filled(t)]

    def accumulated(self, t: int) -> float:
        """Sample-weighted accuracy over the union of test sets 1..t."""
        sizes = np.asarray(self.test_sizes[:t], dtype=np.float64)
        return float(np.sum(self.values[t - 1, :t] * sizes) / np.sum(sizes))


def avg_accuracy(matrix: AccuracyMatrix) -> float:
    rows = matrix.filled_rows()
    if not rows:
        raise ConfigError("matrix has no complete rows")
    return float(np.mean([matrix.accumulated(t) for t in rows]))


def forgetting(matrix: AccuracyMatrix) -> float | None:
    t_final = matrix.sessions
    if t_final < 2 or len(matrix.filled_rows()) != t_final:
        return None
    drops = []
    for i in range(1, t_final):
        peak = max(matrix.get(t, i) for t in range(i, t_final))
        drops.append(peak - matrix.get(t_final, i))
    return float(np.mean(drops))


def bwt(matrix: AccuracyMatrix) -> float | None:
    t_final = matrix.sessions
    if t_final < 2 or len(matrix.filled_rows()) != t_final:
        return None
    return float(np.mean([matrix.get(t_final, i) - matrix.get(i, i)
                          for i in range(1, t_final)]))


def plasticity(matrix: AccuracyMatrix) -> float:
    rows = matrix.filled_rows()
    if not rows:
        raise ConfigError("matrix has no complete rows")
    peaks = []
    for i in range(1, matrix.sessions + 1):
        cells = [matrix.get(t, i) for t in rows if t >= i]
        if cells:
            peaks.append(max(cells))
    return float(np.mean(peaks))


def representation_shift(snapshots: list[np.ndarray]) -> list[float]:
    """Mean L2 distance between consecutive normalized feature snapshots
    of the same probe set; one value per adjacent pair."""
    if len(snapshots) < 2:
        raise ConfigError("need at least 2 checkpoints for a shift trace")
    out = []
    for a, b in zip(snapshots, snapshots[1:]):
        out.append(float(np.mean(np.linalg.norm(b - a, axis=1))))
    return out


def _normalize(f: np.ndarray) -> np.ndarray:
    return f / np.linalg.norm(f, axis=1, keepdims=True)


@dataclass
class RunResult:
    method: str
    seed: int
    matrix: AccuracyMatrix
    avg_accuracy: float
    forgetting: float | None
    bwt: float | None
    plasticity: float | None
    shift: list[float]
    wall_time: float
    fsa_report: FsaReport | None = None
    msa_reports: list[MsaReport] = field(default_factory=list)
    t3: int | None = None
    stages: list[str] = field(default_factory=list)
    final_weights: BackboneWeights | None = None
    final_bank: LoraBank | None = None


class NcmClassifier(ParamsMixin):
    """Nearest class mean over whatever features it is fed."""

    def __init__(self):
        self.sums_: dict[int, np.ndarray] = {}
        self.counts_: dict[int, int] = {}

    def partial_fit(self, z, y):
        z = check_features(z)
        y = check_labels(y, z.shape[0])
        for c in np.unique(y):
            rows = z[y == c]
            c = int(c)
            if c in self.sums_:
                self.sums_[c] += rows.sum(axis=0)
                self.counts_[c] += rows.shape[0]
            else:
                self.sums_[c] = rows.sum(axis=0)
                self.counts_[c] = rows.shape[0]
        return self

    def predict(self, z) -> np.ndarray:
        if not self.sums_:
            raise StateError("no classes fitted")
        z = check_features(z)
        classes = sorted(self.sums_)  # argmin ties land on the lowest id
        centroids = np.stack([self.sums_[c] / self.counts_[c] for c in classes])
        dists = ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        return np.asarray(classes, dtype=np.int64)[np.argmin(dists, axis=1)]


def assert_eval_hygiene(sessions: list[SessionData]) -> None:
    """Content-level disjointness of every train pool vs every test pool."""
    def digest_set(x):
        return {hashlib.blake2s(np.ascontiguousarray(row).tobytes()).digest()
                for row in x}
    train = set()
    test = set()
    for s in sessions:
        train |= digest_set(s.train_x)
        test |= digest_set(s.test_x)
    if train & test:
        raise StateError(
            f"{len(train & test)} clip(s) appear in both train and test pools")


def prepare_backbone(cfg: RunConfig, seed: int) -> BackboneWeights:
    """Init + surrogate pretraining; shared across methods for one seed."""
    weights = init_pretrained(cfg.backbone, seed=seed)
    if cfg.pretrain.epochs > 0:
        clips = pretext_clips(cfg.data, cfg.pretrain.clips, seed=seed)
        pretrain_surrogate(weights, clips, epochs=cfg.pretrain.epochs,
                           lr=cfg.pretrain.lr, seed=seed,
                           mask_fraction=cfg.pretrain.mask_fraction,
                           batch_size=cfg.pretrain.batch_size)
    return weights


class _Registry:
    """First-appearance label registry for the parametric-head baselines."""

    def __init__(self):
        self.classes: list[int] = []

    def extend(self, y) -> list[int]:
        fresh = sorted(set(int(v) for v in y) - set(self.classes))
        self.classes.extend(fresh)
        return fresh

    def to_local(self, y) -> np.ndarray:
        col = {c: j for j, c in enumerate(self.classes)}
        return np.array([col[int(v)] for v in y], dtype=np.int64)

    def to_global(self, local: np.ndarray) -> np.ndarray:
        table = np.asarray(self.classes, dtype=np.int64)
        return table[np.asarray(local, dtype=np.int64)]


def _grow_head(head, dim: int, added: int):
    from .training import LinearHead, fresh_head as _fresh
    if head is None:
        return _fresh(dim, added)
    extra = _fresh(dim, added)
    return LinearHead(w=np.hstack([head.w, extra.w]),
                      b=np.hstack([head.b, extra.b]))


@dataclass
class _Probe:
    clips: np.ndarray
    snapshots: list[np.ndarray] = field(default_factory=list)

    def snap(self, weights, bank) -> None:
        self.snapshots.append(_normalize(features(weights, bank, self.clips)))


def _make_probe(sessions: list[SessionData], count: int) -> _Probe:
    clips = sessions[0].test_x[:count]
    return _Probe(clips=np.asarray(clips, dtype=np.float64))


def run_continual(method: str, sessions: list[SessionData], cfg: RunConfig,
                  pretrained: BackboneWeights | None = None,
                  seed: int | None = None,
                  checkpoint_path: str | None = None,
                  resume: bool = False) -> RunResult:
    """Run one method over one session stream; see module docstring.

    With checkpoint_path set, analytic-family runs save state after every
    session; resume=True continues from the newest saved session and the
    trailing sessions replay with the exact streams of an unbroken run.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    analytic_family = method in ("pace", "fsa-analytic", "frozen-analytic")
    if checkpoint_path is not None and not analytic_family:
        raise ConfigError(
            f"checkpointing covers the analytic-head methods, not {method!r}")
    seed = cfg.seed if seed is None else seed
    assert_eval_hygiene(sessions)
    if pretrained is None:
        pretrained = prepare_backbone(cfg, seed)
    start = time.perf_counter()
    if method == "joint":
        result = _run_joint(sessions, cfg, pretrained, seed)
    elif method in ("ncm", "ncm-fsa"):
        result = _run_ncm(method, sessions, cfg, pretrained, seed)
    elif method == "naive-seq-ft":
        result = _run_naive(sessions, cfg, pretrained, seed)
    else:
        result = _run_analytic_family(method, sessions, cfg, pretrained, seed,
                                      checkpoint_path, resume)
    result.wall_time = time.perf_counter() - start
    result.seed = seed
    return result


def _finish(method, seed, matrix, probe, extras=None) -> RunResult:
    shift = representation_shift(probe.snapshots) if len(probe.snapshots) >= 2 \
        else []
    res = RunResult(
        method=method, seed=seed, matrix=matrix,
        avg_accuracy=avg_accuracy(matrix),
        forgetting=forgetting(matrix), bwt=bwt(matrix),
        plasticity=plasticity(matrix) if len(matrix.filled_rows()) ==
        matrix.sessions else None,
        shift=shift, wall_time=0.0)
    if extras:
        for k, v in extras.items():
            setattr(res, k, v)
    return res


def _eval_row(matrix, t, sessions, predict) -> None:
    for i in range(1, t + 1):
        s = sessions[i - 1]
        matrix.set(t, i, float(np.mean(predict(s.test_x) == s.test_y)))


def _run_analytic_family(method, sessions, cfg, pretrained, seed,
                         checkpoint_path=None, resume=False) -> RunResult:
    use_fsa = method in ("pace", "fsa-analytic")
    use_msa = method == "pace" and cfg.use_msa
    use_projection = cfg.use_projection
    use_reg = cfg.use_regularizer
    weights = pretrained.copy()
    bank = LoraBank()
    clf = AnalyticClassifier(dim=cfg.backbone.dim,
                             proj_dim=cfg.analytic.proj_dim,
                             gamma=cfg.analytic.gamma, seed=seed,
                             nonlinearity=cfg.analytic.nonlinearity)
    matrix = AccuracyMatrix.empty([len(s.test_y) for s in sessions])
    probe = _make_probe(sessions, cfg.bench.probe_clips)
    counts = [len(s.train_y) for s in sessions]
    if use_msa:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t3 = compute_t3(counts, cfg.msa.n_stop)
    else:
        t3 = 1 if use_fsa else 0
    layers = cfg.backbone.layers
    l_tune = layers + 1
    fsa_report = None
    msa_reports: list[MsaReport] = []
    stages = []
    mask_spec = cfg.effective_mask(seed)

    completed = 0
    if resume:
        if not checkpoint_path:
            raise ConfigError("resume requested without a checkpoint path")
        if os.path.exists(checkpoint_path):
            snap = load_checkpoint(checkpoint_path, cfg, method, seed)
            weights, bank, clf = snap["weights"], snap["bank"], snap["clf"]
            matrix.values[...] = snap["matrix"]
            probe.snapshots = snap["snapshots"]
            l_tune = snap["l_tune"]
            fsa_report = snap["fsa_report"]
            msa_reports = snap["msa_reports"]
            stages = snap["stages"]
            completed = snap["completed"]
            if snap["t3"] != t3:
                raise StateError(
                    f"checkpoint was cut at t3={snap['t3']}, this run derives "
                    f"{t3}; the session stream changed")

    for t, s in enumerate(sessions, start=1):
        if t <= completed:
            continue
        if t == 1:
            stage = FSA if use_fsa else FROZEN
            if use_fsa:
                classes = sorted(set(s.train_y.tolist()))
                col = {c: j for j, c in enumerate(classes)}
                y_local = np.array([col[int(v)] for v in s.train_y])
                profile = probe_full_peft(weights, s.train_x, y_local,
                                          len(classes), cfg.fsa, seed)
                l_tune = select_tune_boundary(profile, cfg.fsa.rho_layer)
                head = fresh_head(cfg.backbone.dim, len(classes))
                warm = head_warmup(weights, bank, head, s.train_x, y_local,
                                   cfg.fsa, seed)
                adapt = backbone_adapt(weights, bank, head, s.train_x,
                                       y_local, cfg.fsa, l_tune, seed)
                if bank.unfrozen():
                    bank.freeze_session(1)
                fsa_report = FsaReport(cka=profile.values, l_tune=l_tune,
                                       warmup_losses=warm, adapt_losses=adapt)
            clf.partial_fit(features(weights, bank, s.train_x), s.train_y)
        elif (stage := stage_for(t, t3)) == MSA:
            msa_reports.append(msa_session(
                weights, bank, clf, s.train_x, s.train_y, session=t, t3=t3,
                l_tune=l_tune, config=cfg.msa, eta_head=cfg.fsa.eta_head,
                mask_spec=mask_spec if use_reg else None,
                reg=cfg.reg if use_reg else None,
                use_projection=use_projection, seed=seed))
        else:
            clf.partial_fit(features(weights, bank, s.train_x), s.train_y)
        stages.append(stage)
        probe.snap(weights, bank)
        _eval_row(matrix, t, sessions,
                  lambda x: clf.predict(features(weights, bank, x)))
        if checkpoint_path:
            save_checkpoint(checkpoint_path, cfg, method, seed, weights,
                            bank, clf, matrix, probe, t3=t3, l_tune=l_tune,
                            completed=t, stages=stages,
                            fsa_report=fsa_report, msa_reports=msa_reports)
    return _finish(method, seed, matrix, probe,
                   {"fsa_report": fsa_report, "msa_reports": msa_reports,
                    "t3": t3, "stages": stages, "final_weights": weights,
                    "final_bank": bank})


def _run_ncm(method, sessions, cfg, pretrained, seed) -> RunResult:
    weights = pretrained.copy()
    bank = LoraBank()
    fsa_report = None
    if method == "ncm-fsa":
        s = sessions[0]
        classes = sorted(set(s.train_y.tolist()))
        col = {c: j for j, c in enumerate(classes)}
        y_local = np.array([col[int(v)] for v in s.train_y])
        profile = probe_full_peft(weights, s.train_x, y_local, len(classes),
                                  cfg.fsa, seed)
        l_tune = select_tune_boundary(profile, cfg.fsa.rho_layer)
        head = fresh_head(cfg.backbone.dim, len(classes))
        warm = head_warmup(weights, bank, head, s.train_x, y_local, cfg.fsa,
                           seed)
        adapt = backbone_adapt(weights, bank, head, s.train_x, y_local,
                               cfg.fsa, l_tune, seed)
        if bank.unfrozen():
            bank.freeze_session(1)
        fsa_report = FsaReport(cka=profile.values, l_tune=l_tune,
                               warmup_losses=warm, adapt_losses=adapt)
    clf = NcmClassifier()
    matrix = AccuracyMatrix.empty([len(s.test_y) for s in sessions])
    probe = _make_probe(sessions, cfg.bench.probe_clips)
    for t, s in enumerate(sessions, start=1):
        clf.partial_fit(features(weights, bank, s.train_x), s.train_y)
        probe.snap(weights, bank)
        _eval_row(matrix, t, sessions,
                  lambda x: clf.predict(features(weights, bank, x)))
    return _finish(method, seed, matrix, probe,
                   {"fsa_report": fsa_report, "final_weights": weights,
                    "final_bank": bank})


def _run_naive(sessions, cfg, pretrained, seed) -> RunResult:
    """Single-rate LoRA + growing head every session, no protection."""
    weights = pretrained.copy()
    bank = LoraBank()
    registry = _Registry()
    head = None
    matrix = AccuracyMatrix.empty([len(s.test_y) for s in sessions])
    probe = _make_probe(sessions, cfg.bench.probe_clips)
    for t, s in enumerate(sessions, start=1):
        added = registry.extend(s.train_y)
        head = _grow_head(head, cfg.backbone.dim, len(added))
        y_local = registry.to_local(s.train_y)
        bank.spawn(lora_sites(weights), session=t, rank=cfg.fsa.rank,
                   seed=seed + t)
        train_lora_ce(weights, bank, head, s.train_x, y_local,
                      epochs=cfg.msa.epochs, lr=cfg.fsa.eta_bb,
                      batch_size=cfg.fsa.batch_size, seed=seed,
                      tag=f"naive/s{t}", train_head=True,
                      momentum=cfg.fsa.momentum,
                      head_lr=cfg.fsa.eta_bb)
        bank.freeze_session(t)
        probe.snap(weights, bank)
        _eval_row(matrix, t, sessions, lambda x: registry.to_global(
            head.predict(features(weights, bank, x))))
    return _finish("naive-seq-ft", seed, matrix, probe,
                   {"final_weights": weights, "final_bank": bank})


def _run_joint(sessions, cfg, pretrained, seed) -> RunResult:
    """Upper bound: one training pass over the union of all session data."""
    weights = pretrained.copy()
    bank = LoraBank()
    registry = _Registry()
    all_x = np.concatenate([s.train_x for s in sessions])
    all_y = np.concatenate([s.train_y for s in sessions])
    added = registry.extend(all_y)
    head = _grow_head(None, cfg.backbone.dim, len(added))
    bank.spawn(lora_sites(weights), session=1, rank=cfg.fsa.rank, seed=seed)
    train_lora_ce(weights, bank, head, all_x, registry.to_local(all_y),
                  epochs=cfg.bench.joint_epochs, lr=cfg.fsa.eta_bb,
                  batch_size=cfg.fsa.batch_size, seed=seed, tag="joint",
                  train_head=True, head_lr=cfg.fsa.eta_bb,
                  momentum=cfg.fsa.momentum)
    bank.freeze_session(1)
    t_final = len(sessions)
    matrix = AccuracyMatrix.empty([len(s.test_y) for s in sessions])
    probe = _make_probe(sessions, cfg.bench.probe_clips)
    probe.snap(weights, bank)
    _eval_row(matrix, t_final, sessions, lambda x: registry.to_global(
        head.predict(features(weights, bank, x))))
    return RunResult(method="joint", seed=seed, matrix=matrix,
                     avg_accuracy=matrix.accumulated(t_final),
                     forgetting=None, bwt=None, plasticity=None,
                     shift=[], wall_time=0.0, final_weights=weights,
                     final_bank=bank)


def save_checkpoint(path, cfg, method, seed, weights, bank, clf, matrix,
                    probe, *, t3, l_tune, completed, stages, fsa_report,
                    msa_reports) -> None:
    """Session-boundary snapshot. Streams are stateless, so restoring the
    saved arrays and replaying later sessions reproduces an unbroken run
    bit for bit."""
    meta = {
        "kind": "continual-checkpoint",
        "method": method,
        "seed": int(seed),
        "config": flatten(cfg),
        "completed": int(completed),
        "t3": int(t3),
        "l_tune": int(l_tune),
        "stages": list(stages),
        "classes": [int(c) for c in clf.classes_],
        "seen": int(clf.state_.seen),
        "n_snapshots": len(probe.snapshots),
        "fsa_report": None if fsa_report is None
        else json.loads(fsa_report.to_json()),
        "msa_reports": [json.loads(r.to_json()) for r in msa_reports],
    }
    tensors: dict[str, np.ndarray] = {}
    for name, arr in weights.named():
        tensors[f"backbone/{name}"] = arr
    for key in sorted(bank.adapters):
        for adapter in bank.adapters[key]:
            prefix = f"adapter/{key[0]}/{key[1]}/{adapter.session}"
            tensors[prefix + "/a"] = adapter.a
            tensors[prefix + "/b"] = adapter.b
    tensors["projector/w"] = clf.projector_.w
    tensors["analytic/r"] = clf.state_.r
    tensors["analytic/w_hat"] = clf.state_.w_hat
    tensors["matrix/values"] = matrix.values
    for i, snap in enumerate(probe.snapshots):
        tensors[f"probe/{i}"] = snap
    write_bundle(path, meta, tensors)


def load_checkpoint(path, cfg, method, seed) -> dict:
    meta, tensors = read_bundle(path)
    if meta.get("kind") != "continual-checkpoint":
        raise StateError(f"{path} is not a run checkpoint")
    if meta["method"] != method or meta["seed"] != int(seed):
        raise StateError(
            f"checkpoint is for {meta['method']}/seed {meta['seed']}, "
            f"requested {method}/seed {seed}")
    if meta["config"] != flatten(cfg):
        drift = [k for k in flatten(cfg)
                 if meta["config"].get(k) != flatten(cfg)[k]]
        raise StateError(f"checkpoint config differs at: {', '.join(drift)}")

    weights = init_pretrained(cfg.backbone, seed=seed)
    for name, arr in weights.named():
        arr[...] = tensors[f"backbone/{name}"]

    sites = {s.key: s for s in lora_sites(weights)}
    bank = LoraBank()
    for name in tensors:
        if not (name.startswith("adapter/") and name.endswith("/a")):
            continue
        _, layer, site_name, session, _ = name.split("/")
        key = (int(layer), site_name)
        if key not in sites:
            raise StateError(f"checkpoint adapter at unknown site {key}")
        adapter = LoraAdapter(site=key, a=tensors[name],
                              b=tensors[f"adapter/{layer}/{site_name}/{session}/b"],
                              session=int(session), frozen=True)
        bank.adapters.setdefault(key, []).append(adapter)
    for ads in bank.adapters.values():
        ads.sort(key=lambda a: a.session)
    if bank.adapters:
        bank.active_session = max(a.session for ads in bank.adapters.values()
                                  for a in ads)

    clf = AnalyticClassifier(dim=cfg.backbone.dim,
                             proj_dim=cfg.analytic.proj_dim,
                             gamma=cfg.analytic.gamma, seed=seed,
                             nonlinearity=cfg.analytic.nonlinearity)
    clf.projector_ = Projector(w=tensors["projector/w"], seed=seed)
    clf.state_ = AnalyticState(r=tensors["analytic/r"],
                               w_hat=tensors["analytic/w_hat"],
                               gamma=cfg.analytic.gamma,
                               seen=int(meta["seen"]))
    clf.classes_ = np.asarray(meta["classes"], dtype=np.int64)

    fsa_report = None
    if meta["fsa_report"] is not None:
        d = meta["fsa_report"]
        fsa_report = FsaReport(cka=tuple(d["cka"]), l_tune=d["l_tune"],
                               warmup_losses=d["warmup_losses"],
                               adapt_losses=d["adapt_losses"])
    msa_reports = []
    for d in meta["msa_reports"]:
        msa_reports.append(MsaReport(
            session=d["session"], bases=d["bases"],
            boundary_size=d["boundary_size"],
            boundary_by_class={int(k): v
                               for k, v in d["boundary_by_class"].items()},
            warmup_losses=d["warmup_losses"],
            train_losses=d["train_losses"]))

    return {
        "weights": weights, "bank": bank, "clf": clf,
        "matrix": tensors["matrix/values"],
        "snapshots": [tensors[f"probe/{i}"]
                      for i in range(meta["n_snapshots"])],
        "completed": meta["completed"], "t3": meta["t3"],
        "l_tune": meta["l_tune"], "stages": list(meta["stages"]),
        "fsa_report": fsa_report, "msa_reports": msa_reports,
    }
