"""Linear classification head and the shared SGD plumbing."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import autodiff as ad
from .numerics import rng


@dataclass
class LinearHead:
    w: np.ndarray  # (D, C)
    b: np.ndarray  # (1, C)

    @property
    def n_classes(self) -> int:
        return self.w.shape[1]

    def copy(self) -> "LinearHead":
        return LinearHead(self.w.copy(), self.b.copy())

    def logits(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        return z @ self.w + self.b

    def predict(self, z: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(z), axis=1)


def fresh_head(dim: int, n_classes: int) -> LinearHead:
    """Zero-init head: the first gradient step is then the pure
    class-mean contrast, so a short low-rate warm-up yields a direction
    aligned with whatever weak signal the features carry instead of a
    random one that drowns it."""
    return LinearHead(w=np.zeros((dim, n_classes)), b=np.zeros((1, n_classes)))


def head_leaves(head: LinearHead) -> dict[str, ad.Node]:
    return {"head/w": ad.leaf(head.w), "head/b": ad.leaf(head.b)}


def head_logits(head: LinearHead, z: ad.Node, leaves: dict[str, ad.Node] | None):
    """Logits node for pooled features; trainable when leaves given."""
    w = leaves["head/w"] if leaves else head.w
    b = leaves["head/b"] if leaves else head.b
    return ad.add(ad.matmul(z, w), b)


def minibatches(n: int, batch_size: int, gen: np.random.Generator | None):
    """Yield index arrays covering [0, n); shuffled when a generator is given."""
    order = gen.permutation(n) if gen is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_head_on_features(head: LinearHead, feats: np.ndarray, labels: np.ndarray,
                           epochs: int, lr: float, batch_size: int,
                           seed: int, tag: str) -> list[float]:
    """SGD on the head alone over a fixed feature table (backbone frozen, so
    features are computed once by the caller). Mutates `head` in place;
    returns per-epoch mean loss."""
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if feats.shape[0] != labels.shape[0]:
        raise ShapeError("train_head_on_features: features/labels disagree")
    history = []
    for epoch in range(epochs):
        gen = rng.stream(seed, f"{tag}/shuffle/{epoch}")
        losses = []
        for idx in minibatches(feats.shape[0], batch_size, gen):
            leaves = head_leaves(head)
            logits = ad.add(ad.matmul(feats[idx], leaves["head/w"]),
                            leaves["head/b"])
            loss = ad.cross_entropy_logits(logits, labels[idx])
            ad.backward(loss)
            losses.append(float(loss.value[0, 0]))
            head.w -= lr * leaves["head/w"].grad
            head.b -= lr * leaves["head/b"].grad
        history.append(float(np.mean(losses)) if losses else 0.0)
    return history


def sgd_apply(bank_grads: dict[str, np.ndarray], targets: dict[str, np.ndarray],
              lr: float) -> None:
    """In-place step: target -= lr * grad for every named gradient."""
    for name, grad in bank_grads.items():
        if name in targets:
            targets[name] -= lr * grad


def train_lora_ce(weights, bank, head: LinearHead, x: np.ndarray,
                  y_local: np.ndarray, *, epochs: int, lr: float,
                  batch_size: int, seed: int, tag: str,
                  train_head: bool = False, head_lr: float | None = None,
                  grad_filter=None, epoch_hook=None, extra_term=None,
                  momentum: float = 0.0) -> list[float]:
    """SGD over the bank's unfrozen adapter factors with per-sample CE.

    y_local holds head-column indexes, already mapped from global labels.
    grad_filter(name, grad) -> grad rewrites factor gradients before the
    step (the subspace projection hooks in here); extra_term(i, site_delta,
    encoding) -> Node adds a per-sample loss on top of CE; epoch_hook(e)
    runs before each epoch (centroid refresh). Returns per-epoch mean loss.
    """
    from .backbone import adapter_leaves, adapter_targets, encode, \
        trainable_site_delta

    x = np.asarray(x, dtype=np.float64)
    y_local = np.asarray(y_local, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if n != y_local.shape[0]:
        raise ShapeError("train_lora_ce: clips/labels disagree")
    velocity: dict[str, np.ndarray] = {}
    history = []
    for epoch in range(epochs):
        if epoch_hook is not None:
            epoch_hook(epoch)
        gen = rng.stream(seed, f"{tag}/shuffle/{epoch}")
        losses = []
        for idx in minibatches(n, batch_size, gen):
            leaves = adapter_leaves(bank)
            targets = adapter_targets(bank)
            hl = head_leaves(head) if train_head else None
            sd = trainable_site_delta(bank, leaves)
            total = None
            for i in idx:
                enc = encode(weights, x[i], site_delta=sd)
                logits = head_logits(head, enc.pooled, hl)
                term = ad.cross_entropy_logits(logits, y_local[i:i + 1])
                if extra_term is not None:
                    extra = extra_term(int(i), sd, enc)
                    if extra is not None:
                        term = ad.add(term, extra)
                total = term if total is None else ad.add(total, term)
            loss = ad.scale(total, 1.0 / len(idx))
            if loss.requires_grad:
                ad.backward(loss)
            losses.append(float(loss.value[0, 0]))
            for name, node in leaves.items():
                g = node.grad
                if g is None:
                    continue
                if grad_filter is not None:
                    g = grad_filter(name, g)
                if momentum > 0.0:
                    v = velocity.get(name)
                    v = g if v is None else momentum * v + g
                    velocity[name] = v
                    g = v
                targets[name] -= lr * g
            if hl is not None:
                step = head_lr if head_lr is not None else lr
                if hl["head/w"].grad is not None:
                    head.w -= step * hl["head/w"].grad
                if hl["head/b"].grad is not None:
                    head.b -= step * hl["head/b"].grad
        history.append(float(np.mean(losses)) if losses else 0.0)
    return history
