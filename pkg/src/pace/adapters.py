"""Low-rank adapter lifecycle: spawn, train, freeze, merge, subtract.

A bank holds every adapter ever spawned, keyed by attach site. Per site
the session tags are strictly increasing and at most one adapter is
unfrozen at a time; the delta applied at a site is the sum of all its
adapter products, and the "unlearned" view subtracts only the frozen
ones. Orientation is fixed once: delta = A @ B maps input dim to output
dim, A is Gaussian, B starts at zero so a fresh adapter is a no-op.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError
from .numerics import rng

SiteKey = tuple[int, str]  # (layer index, site name), layers 1-based


@dataclass(frozen=True)
class LoraSite:
    layer: int
    name: str
    d_in: int
    d_out: int

    @property
    def key(self) -> SiteKey:
        return (self.layer, self.name)


@dataclass
class LoraAdapter:
    site: SiteKey
    a: np.ndarray  # (d_in, r)
    b: np.ndarray  # (r, d_out)
    session: int
    frozen: bool = False

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def delta(self) -> np.ndarray:
        return self.a @ self.b


def _init_factors(site: LoraSite, rank: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    gen = rng.stream(seed, f"lora/{site.layer}/{site.name}")
    a = gen.normal(0.0, 1.0 / np.sqrt(site.d_in), size=(site.d_in, rank))
    b = np.zeros((rank, site.d_out))
    return a, b


@dataclass
class LoraBank:
    adapters: dict[SiteKey, list[LoraAdapter]] = field(default_factory=dict)
    active_session: int | None = None

    def at(self, key: SiteKey) -> list[LoraAdapter]:
        return self.adapters.get(key, [])

    def unfrozen(self) -> list[LoraAdapter]:
        return [ad for ads in self.adapters.values() for ad in ads if not ad.frozen]

    def spawn(self, sites, session: int, rank: int, seed: int) -> list[LoraAdapter]:
        """Add one fresh adapter per site, tagged with this session."""
        if rank < 1:
            raise ConfigError(f"adapter rank must be >= 1, got {rank}")
        leftover = self.unfrozen()
        if leftover:
            raise StateError(
                f"spawn: {len(leftover)} unfrozen adapter(s) from session "
                f"{leftover[0].session} still active"
            )
        if self.active_session is not None and session <= self.active_session:
            raise StateError(
                f"spawn: session {session} not after active {self.active_session}"
            )
        fresh = []
        for site in sites:
            a, b = _init_factors(site, rank, seed)
            ad = LoraAdapter(site=site.key, a=a, b=b, session=session)
            self.adapters.setdefault(site.key, []).append(ad)
            fresh.append(ad)
        self.active_session = session
        return fresh

    def freeze_session(self, session: int) -> None:
        """Freeze every session-t adapter. Idempotent for the active session."""
        if session != self.active_session:
            raise StateError(
                f"freeze_session: {session} is not the active session "
                f"({self.active_session})"
            )
        for ads in self.adapters.values():
            for ad in ads:
                if ad.session == session:
                    ad.frozen = True

    def effective_delta(self, key: SiteKey, d_in: int, d_out: int) -> np.ndarray:
        """Sum of every adapter product at the site (frozen or not)."""
        total = np.zeros((d_in, d_out))
        for ad in self.at(key):
            total += ad.delta()
        return total

    def frozen_delta(self, key: SiteKey, d_in: int, d_out: int) -> np.ndarray:
        total = np.zeros((d_in, d_out))
        for ad in self.at(key):
            if ad.frozen:
                total += ad.delta()
        return total


def unlearned_weights(w0: np.ndarray, bank: LoraBank, key: SiteKey) -> np.ndarray:
    """Base weight with every frozen delta subtracted; the in-training
    adapter, if any, is excluded."""
    return w0 - bank.frozen_delta(key, w0.shape[0], w0.shape[1])
