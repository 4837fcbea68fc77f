"""Synthetic spectrogram benchmarks, session splitting, external ingestion.

Two generation modes realize the easy/hard dichotomy the harness needs:

* coarse — each class owns a disjoint dominant frequency band; classes
  are separable by raw pixel distance alone.
* fine — every class shares one global harmonic template; classes differ
  only by a low-energy ripple pair at a random phase per clip: a carrier
  on a bin owned by the class pair alone, plus a stronger echo of the
  same wave on one anchor bin common to all classes. Twin classes share
  the carrier at equal energy and differ only in timbre: the odd twin
  adds a faint octave overtone on its carrier bin. Random phase empties
  the pixel centroids, so raw-pixel classifiers degrade; generic
  features read the overtone only weakly, and clean twin splits need a
  representation that amplifies the pair's own carrier bin. Disjoint
  carrier bins keep sessions from treading on one another, while the
  shared anchor concentrates cross-session variance on directions
  subspace projection is meant to protect.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .numerics import rng
from . import persist

HARMONIC_BINS_EVERY = 4  # every 4th bin carries the shared harmonic ridge
ANCHOR_GAIN = np.sqrt(2.0)  # anchor echo amplitude relative to the carrier


@dataclass(frozen=True)
class DatasetSpec:
    mode: str = "fine"
    classes: int = 16
    clips_per_class: int = 80
    frames: int = 64
    bins: int = 16
    train_fraction: float = 0.8
    signature_energy: float = 0.1  # fine mode: carrier / template energy
    twin_leak: float = 0.5  # fine mode: odd-twin overtone amplitude vs carrier
    noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("coarse", "fine"):
            raise ConfigError(f"unknown dataset mode {self.mode!r}")
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.mode == "coarse" and self.classes > self.bins:
            raise ConfigError(
                f"coarse mode needs one band per class: {self.classes} classes "
                f"> {self.bins} bins")
        if self.mode == "fine":
            if self.frames < 16 or self.bins < 8:
                raise ConfigError(
                    f"fine mode needs dims >= 16x8, got {self.frames}x{self.bins}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train fraction must be in (0, 1)")
        if self.twin_leak < 0.0:
            raise ConfigError("twin leak must be nonnegative")
        if self.clips_per_class < 2:
            raise ConfigError("need at least 2 clips per class")


@dataclass
class LabeledClip:
    values: np.ndarray  # (frames, bins)
    label: int
    split: str  # "train" | "test"


@dataclass(frozen=True)
class SessionPlan:
    sessions: tuple[tuple[int, ...], ...]

    @property
    def count(self) -> int:
        return len(self.sessions)

    def validate(self, n_classes: int) -> None:
        seen: set[int] = set()
        for t, classes in enumerate(self.sessions):
            overlap = seen & set(classes)
            if overlap:
                raise ConfigError(
                    f"session {t + 1} repeats class(es) {sorted(overlap)}")
            seen |= set(classes)
        if seen != set(range(n_classes)):
            missing = sorted(set(range(n_classes)) - seen)
            extra = sorted(seen - set(range(n_classes)))
            raise ConfigError(
                f"plan does not partition the label set "
                f"(missing {missing}, unknown {extra})")


@dataclass
class SessionData:
    classes: tuple[int, ...]
    train_x: np.ndarray  # (n, frames, bins)
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


def make_plan(n_classes: int, n_sessions: int, seed: int) -> SessionPlan:
    """Shuffle classes into equal-sized disjoint sessions.

    The shuffle permutes contiguous id blocks of session size (and the
    order within each block) rather than flattening all ids. Generators
    are free to put related classes on adjacent ids, and a session then
    receives a whole related group; for generators without such structure
    the block shuffle is just another uniform assignment."""
    if n_sessions < 1 or n_classes % n_sessions:
        raise ConfigError(
            f"{n_classes} classes do not split evenly into {n_sessions} sessions")
    per = n_classes // n_sessions
    gen = rng.stream(seed, "plan")
    blocks = gen.permutation(n_sessions)
    sessions = tuple(
        tuple(int(b * per + j) for j in gen.permutation(per))
        for b in blocks)
    return SessionPlan(sessions)


def _global_template(spec: DatasetSpec) -> np.ndarray:
    """Shared scaffold: harmonic ridges on fixed bins, slow time swell."""
    t = np.arange(spec.frames)[:, None]
    f = np.arange(spec.bins)[None, :]
    envelope = 0.5 + 1.0 * (f % HARMONIC_BINS_EVERY == 1)
    swell = 1.0 + 0.4 * np.sin(2.0 * np.pi * t / spec.frames * 2.0)
    return 0.5 * swell * envelope


def _anchor_bin(spec: DatasetSpec) -> int:
    """Topmost bin free of the harmonic ridge; all classes echo there."""
    b = spec.bins - 1
    while b % HARMONIC_BINS_EVERY == 1:
        b -= 1
    return b


def _fine_class_params(spec: DatasetSpec):
    """Per-class signature: (carrier bin, period, twin parity).

    Classes come in twins: ids 2k and 2k+1 share a carrier bin owned by
    no other pair, so adapting to one pair leaves the feature directions
    the other pairs live on untouched. Both twins echo the carrier on
    the shared anchor bin at identical strength; the odd twin mixes a
    faint octave overtone into its carrier at equal total energy, so the
    twins differ in spectral shape on one bin and in nothing else.
    Global phase is drawn fresh per clip, so pixel centroids carry
    almost no signature energy and raw-pixel probes collapse. Generic
    features read the overtone weakly, leaving twins mostly confused;
    that weak direction is the toehold supervised adaptation amplifies,
    on a bin nothing else occupies. Carriers fill the spectrum bottom up
    while the anchor sits on top, so a contiguous frequency mask of at
    most half the bins can silence a low carrier or the anchor, not
    both. Periods start at 4 so every overtone clears the two-frame
    sampling floor."""
    anchor = _anchor_bin(spec)
    free = [b for b in range(anchor)
            if b % HARMONIC_BINS_EVERY != 1]
    n_geom = (spec.classes + 1) // 2
    if len(free) < n_geom:
        raise ConfigError("not enough distinct signatures for the class count")
    gen = rng.stream(spec.seed, "fine/classes")
    bins = gen.permutation(free[:n_geom])
    periods = gen.choice((4, 5, 6, 8, 10), size=n_geom)
    return [(int(bins[c // 2]), int(periods[c // 2]), c % 2)
            for c in range(spec.classes)]


def _signature(spec: DatasetSpec, params, phase: float) -> np.ndarray:
    """Class signature, scaled to unit base-carrier energy: one ripple
    on the pair's own carrier bin, an echo on the shared anchor bin.
    Only the carrier's gain depends on parity; the echo is identical
    across twins, so the amplitude leak lives entirely on the bin the
    pair owns and nothing about a twin can be read anywhere else."""
    b, period, parity = params
    wave = np.sin(2.0 * np.pi * np.arange(spec.frames) / period + phase)
    wave = wave / np.sqrt(float((wave ** 2).sum()))
    sig = np.zeros((spec.frames, spec.bins))
    gain = 1.0 if parity == 0 else 1.0 + spec.twin_leak
    sig[:, b] = gain * wave
    sig[:, _anchor_bin(spec)] = ANCHOR_GAIN * wave
    return sig


def gen_synthetic(spec: DatasetSpec) -> list[LabeledClip]:
    spec.validate()
    clips: list[LabeledClip] = []
    n_train = int(np.floor(spec.train_fraction * spec.clips_per_class))
    if spec.mode == "coarse":
        band = spec.bins // spec.classes
        t = np.arange(spec.frames)[:, None]
        templates = []
        for c in range(spec.classes):
            base = np.zeros((spec.frames, spec.bins))
            stripe = 1.5 * (1.0 + 0.3 * np.sin(2.0 * np.pi * t / (8.0 + c)))
            base[:, c * band:(c + 1) * band] = stripe
            templates.append(base)
        for c in range(spec.classes):
            for i in range(spec.clips_per_class):
                gen = rng.stream(spec.seed, f"coarse/{c}/{i}")
                values = templates[c] + gen.normal(0.0, spec.noise,
                                                   size=templates[c].shape)
                clips.append(LabeledClip(values, c,
                                         "train" if i < n_train else "test"))
        return clips

    template = _global_template(spec)
    template_energy = float((template ** 2).sum())
    class_params = _fine_class_params(spec)
    for c in range(spec.classes):
        for i in range(spec.clips_per_class):
            gen = rng.stream(spec.seed, f"fine/{c}/{i}")
            gain = gen.uniform(0.9, 1.1)
            phase = gen.uniform(0.0, 2.0 * np.pi)
            sig = _signature(spec, class_params[c], phase)
            amp = np.sqrt(spec.signature_energy * template_energy)
            values = gain * template + amp * sig
            values += gen.normal(0.0, spec.noise, size=values.shape)
            clips.append(LabeledClip(values, c,
                                     "train" if i < n_train else "test"))
    return clips


def pretext_clips(spec: DatasetSpec, count: int, seed: int) -> np.ndarray:
    """Unlabeled clips for surrogate pretraining, disjoint stream from any
    downstream seed.

    Each clip is the shared scaffold plus several independent band accents
    at random bins, periods, and phases. Reconstructing a masked patch
    then requires the visible tokens to carry which bins ripple and how,
    so the encoder is pushed toward per-bin carrier detectors instead of
    memorizing the scaffold. Accent statistics cover every bin and the
    whole period range the labeled sets draw from, but never the paired
    structure that defines a class.
    """
    template = _global_template(spec)
    out = np.empty((count, spec.frames, spec.bins))
    t = np.arange(spec.frames)
    for i in range(count):
        gen = rng.stream(seed, f"pretext/{i}")
        gain = gen.uniform(0.7, 1.3)
        accent = np.zeros((spec.frames, spec.bins))
        for _ in range(int(gen.integers(2, 6))):
            b = int(gen.integers(0, spec.bins))
            period = float(gen.uniform(2.5, 12.0))
            phase = gen.uniform(0.0, 2.0 * np.pi)
            amp = gen.uniform(0.25, 0.55)
            accent[:, b] += amp * np.sin(2.0 * np.pi * t / period + phase)
        out[i] = gain * template + accent + gen.normal(0.0, spec.noise,
                                                       size=template.shape)
    return out


def split_sessions(clips: list[LabeledClip], plan: SessionPlan) -> list[SessionData]:
    labels = {clip.label for clip in clips}
    plan.validate(len(labels))
    by_class: dict[int, list[LabeledClip]] = {}
    for clip in clips:
        by_class.setdefault(clip.label, []).append(clip)
    out = []
    for classes in plan.sessions:
        train, test = [], []
        for c in classes:
            for clip in by_class[c]:
                (train if clip.split == "train" else test).append(clip)
        out.append(SessionData(
            classes=tuple(classes),
            train_x=np.stack([c.values for c in train]),
            train_y=np.array([c.label for c in train], dtype=np.int64),
            test_x=np.stack([c.values for c in test]),
            test_y=np.array([c.label for c in test], dtype=np.int64),
        ))
    return out


def default_fine_benchmark(seed: int) -> tuple[DatasetSpec, SessionPlan]:
    """Desk-scale default: 16 classes in 8 two-class sessions, 80 clips each."""
    spec = DatasetSpec(mode="fine", seed=seed)
    return spec, make_plan(spec.classes, 8, seed)


def save_clips(prefix: str, clips_or_x, labels=None) -> None:
    """Write a clip stack to '<prefix>.pact' plus '<prefix>.labels'."""
    if labels is None:
        stack = np.stack([c.values for c in clips_or_x])
        labels = np.array([c.label for c in clips_or_x], dtype=np.int64)
    else:
        stack = np.asarray(clips_or_x, dtype=np.float64)
    persist.write_tensor(f"{prefix}.pact", stack)
    persist.write_labels(f"{prefix}.labels", labels)


def load_external(path: str, kind: str = "clips",
                  dims: tuple[int, ...] | None = None):
    """Load a tensor container plus its label sidecar.

    kind "clips" expects rank 3 (n, frames, bins); "features" rank 2
    (n, dim). dims, when given, pins the trailing shape before anything
    downstream touches the data.
    """
    arr = persist.read_tensor(path)
    want_rank = 3 if kind == "clips" else 2
    if kind not in ("clips", "features"):
        raise ConfigError(f"unknown load kind {kind!r}")
    if arr.ndim != want_rank:
        raise DataError(f"{path}: rank {arr.ndim}, expected {want_rank} for {kind}")
    if dims is not None and tuple(arr.shape[1:]) != tuple(dims):
        raise ShapeError(
            f"{path}: trailing dims {arr.shape[1:]} do not match expected {dims}")
    label_path = path[:-5] + ".labels" if path.endswith(".pact") else path + ".labels"
    labels = persist.read_labels(label_path, arr.shape[0])
    return np.asarray(arr, dtype=np.float64), labels
