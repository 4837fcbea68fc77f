"""Small spectrogram transformer: patchify, embed, L pre-norm blocks, pool.

The encoder stands in for a large pretrained audio model. It exposes the
two things the continual machinery needs from a backbone: per-layer
activations (for the representation-drift gate and the subspace bases)
and named low-rank attach sites (attention output projection and MLP
input projection of every block).

One `encode` implementation serves training and evaluation. Weights and
adapter deltas enter as graph nodes when gradients are wanted and as
detached constants otherwise, so an inference forward performs exactly
the arithmetic a training forward would.
"""

from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraBank, LoraSite, SiteKey
from .errors import ConfigError, ShapeError
from .numerics import autodiff as ad
from .numerics import rng

ATTN_OUT = "attn_out"
MLP_IN = "mlp_in"


@dataclass(frozen=True)
class BackboneConfig:
    layers: int = 4
    dim: int = 32
    patch: int = 8
    mlp_hidden: int = 64

    def validate(self) -> None:
        if self.layers < 2:
            raise ConfigError(f"backbone needs >= 2 layers, got {self.layers}")
        if min(self.dim, self.patch, self.mlp_hidden) < 1:
            raise ConfigError("backbone dims must be positive")


@dataclass
class BlockWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray

    def named(self, layer: int):
        for name in ("ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo",
                     "ln2_gain", "ln2_bias", "mlp_in", "mlp_out"):
            yield f"b{layer}.{name}", getattr(self, name)


@dataclass
class BackboneWeights:
    config: BackboneConfig
    patch_embed: np.ndarray  # (patch*patch, D)
    blocks: list[BlockWeights]
    frozen: list[bool] = field(default_factory=list)

    def named(self):
        yield "patch_embed", self.patch_embed
        for i, blk in enumerate(self.blocks):
            yield from blk.named(i + 1)

    def copy(self) -> "BackboneWeights":
        blocks = [BlockWeights(**{k: getattr(b, k).copy() for k in (
            "ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo",
            "ln2_gain", "ln2_bias", "mlp_in", "mlp_out")}) for b in self.blocks]
        return BackboneWeights(self.config, self.patch_embed.copy(), blocks,
                               list(self.frozen))


@dataclass
class LayerActivations:
    """Graph-free record of one forward pass (1-based layer indexing)."""
    layer_inputs: list[np.ndarray]
    layer_outputs: list[np.ndarray]
    pooled: np.ndarray  # (D,)
    site_inputs: dict[SiteKey, np.ndarray] | None = None


def init_pretrained(config: BackboneConfig, seed: int = 0) -> BackboneWeights:
    """Scaled-Gaussian initialization; run pretrain_surrogate afterwards to
    give the encoder genuine upstream structure."""
    config.validate()
    d, h, p = config.dim, config.mlp_hidden, config.patch
    gen = rng.stream(seed, "backbone/init")

    def mat(rows, cols):
        return gen.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols))

    blocks = []
    for _ in range(config.layers):
        blocks.append(BlockWeights(
            ln1_gain=np.ones((1, d)), ln1_bias=np.zeros((1, d)),
            wq=mat(d, d), wk=mat(d, d), wv=mat(d, d), wo=mat(d, d),
            ln2_gain=np.ones((1, d)), ln2_bias=np.zeros((1, d)),
            mlp_in=mat(d, h), mlp_out=mat(h, d),
        ))
    return BackboneWeights(
        config=config,
        patch_embed=mat(p * p, d),
        blocks=blocks,
        frozen=[False] * config.layers,
    )


def lora_sites(weights: BackboneWeights) -> list[LoraSite]:
    d, h = weights.config.dim, weights.config.mlp_hidden
    sites = []
    for layer in range(1, weights.config.layers + 1):
        sites.append(LoraSite(layer, ATTN_OUT, d, d))
        sites.append(LoraSite(layer, MLP_IN, d, h))
    return sites


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """Cut a (T, F) map into non-overlapping patch*patch squares, row-major
    over (time block, frequency block); leftovers are dropped."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"spectrogram must be 2-D, got {x.shape}")
    t, f = x.shape
    nt, nf = t // patch, f // patch
    if nt < 1 or nf < 1:
        raise ShapeError(f"spectrogram {x.shape} smaller than patch {patch}")
    out = np.empty((nt * nf, patch * patch))
    k = 0
    for i in range(nt):
        for j in range(nf):
            out[k] = x[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch].ravel()
            k += 1
    return out


def positional_encoding(n_tokens: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table; not a weight, never trained."""
    pos = np.arange(n_tokens)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


@dataclass
class Encoding:
    """Graph-carrying counterpart of LayerActivations."""
    layer_inputs: list[ad.Node]
    layer_outputs: list[ad.Node]
    pooled: ad.Node  # (1, D)
    site_inputs: dict[SiteKey, ad.Node]


def encode(weights: BackboneWeights, x: np.ndarray,
           site_delta=None, params: dict[str, ad.Node] | None = None,
           masked_tokens: np.ndarray | None = None) -> Encoding:
    """Single forward implementation.

    site_delta: optional callable SiteKey -> (Node | ndarray | None) giving
    the summed adapter delta at each attach site.
    params: optional name -> Node overrides for base weights (pretraining).
    masked_tokens: optional boolean mask of token rows to zero before embed.
    """
    params = params or {}

    def w(name: str, arr: np.ndarray):
        return params.get(name, arr)  # ndarray consts are lifted by the ops

    cfg = weights.config
    tokens = patchify(x, cfg.patch)
    if masked_tokens is not None:
        tokens = tokens * (~masked_tokens)[:, None]
    h = ad.add(ad.matmul(tokens, w("patch_embed", weights.patch_embed)),
               positional_encoding(tokens.shape[0], cfg.dim))

    inv_sqrt_d = 1.0 / np.sqrt(cfg.dim)
    layer_inputs, layer_outputs = [], []
    site_inputs: dict[SiteKey, ad.Node] = {}
    for li, blk in enumerate(weights.blocks):
        layer = li + 1
        layer_inputs.append(h)
        hn = ad.layer_norm(h, w(f"b{layer}.ln1_gain", blk.ln1_gain),
                           w(f"b{layer}.ln1_bias", blk.ln1_bias))
        q = ad.matmul(hn, w(f"b{layer}.wq", blk.wq))
        k = ad.matmul(hn, w(f"b{layer}.wk", blk.wk))
        v = ad.matmul(hn, w(f"b{layer}.wv", blk.wv))
        attn = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_d))
        ctx = ad.matmul(attn, v)
        site_inputs[(layer, ATTN_OUT)] = ctx
        h = ad.add(h, ad.matmul(ctx, _with_delta(
            w(f"b{layer}.wo", blk.wo), site_delta, (layer, ATTN_OUT))))

        hn2 = ad.layer_norm(h, w(f"b{layer}.ln2_gain", blk.ln2_gain),
                            w(f"b{layer}.ln2_bias", blk.ln2_bias))
        site_inputs[(layer, MLP_IN)] = hn2
        mid = ad.gelu(ad.matmul(hn2, _with_delta(
            w(f"b{layer}.mlp_in", blk.mlp_in), site_delta, (layer, MLP_IN))))
        h = ad.add(h, ad.matmul(mid, w(f"b{layer}.mlp_out", blk.mlp_out)))
        layer_outputs.append(h)

    pooled = ad.mean_rows(h)
    return Encoding(layer_inputs, layer_outputs, pooled, site_inputs)


def _with_delta(base, site_delta, key: SiteKey):
    if site_delta is None:
        return base
    delta = site_delta(key)
    if delta is None:
        return base
    if isinstance(delta, ad.Node):
        return ad.add(base, delta)
    return base + delta


def bank_site_delta(bank: LoraBank):
    """Summed ndarray delta per site from every adapter in the bank."""
    def site_delta(key: SiteKey):
        ads = bank.at(key)
        if not ads:
            return None
        total = ads[0].delta()
        for ad_ in ads[1:]:
            total = total + ad_.delta()
        return total
    return site_delta


def unlearned_site_delta(bank: LoraBank):
    """Negated sum of frozen deltas: evaluates the pre-adaptation model."""
    def site_delta(key: SiteKey):
        ads = [a for a in bank.at(key) if a.frozen]
        if not ads:
            return None
        total = ads[0].delta()
        for ad_ in ads[1:]:
            total = total + ad_.delta()
        return -total
    return site_delta


def forward(weights: BackboneWeights, bank: LoraBank | None, x: np.ndarray,
            record_site_inputs: bool = False,
            site_delta=None) -> LayerActivations:
    """Graph-free forward returning plain arrays."""
    if site_delta is None:
        site_delta = bank_site_delta(bank) if bank is not None else None
    enc = encode(weights, x, site_delta=site_delta)
    return LayerActivations(
        layer_inputs=[n.value for n in enc.layer_inputs],
        layer_outputs=[n.value for n in enc.layer_outputs],
        pooled=enc.pooled.value[0],
        site_inputs={k: n.value for k, n in enc.site_inputs.items()}
        if record_site_inputs else None,
    )


def features(weights: BackboneWeights, bank: LoraBank | None,
             clips: np.ndarray, site_delta=None) -> np.ndarray:
    """Pooled feature per clip: (N, T, F) -> (N, D)."""
    clips = np.asarray(clips, dtype=np.float64)
    if clips.ndim != 3:
        raise ShapeError(f"expected clip stack (n, T, F), got {clips.shape}")
    out = np.empty((clips.shape[0], weights.config.dim))
    for i in range(clips.shape[0]):
        out[i] = forward(weights, bank, clips[i], site_delta=site_delta).pooled
    return out


def adapter_leaves(bank: LoraBank) -> dict[str, ad.Node]:
    """One leaf node per unfrozen factor, keyed for the gradient bank."""
    leaves = {}
    for ad_ in bank.unfrozen():
        layer, name = ad_.site
        leaves[f"lora/{layer}/{name}/{ad_.session}/a"] = ad.leaf(ad_.a)
        leaves[f"lora/{layer}/{name}/{ad_.session}/b"] = ad.leaf(ad_.b)
    return leaves


def adapter_targets(bank: LoraBank) -> dict[str, np.ndarray]:
    """Name -> mutable factor array, matching adapter_leaves keys."""
    targets = {}
    for ad_ in bank.unfrozen():
        layer, name = ad_.site
        targets[f"lora/{layer}/{name}/{ad_.session}/a"] = ad_.a
        targets[f"lora/{layer}/{name}/{ad_.session}/b"] = ad_.b
    return targets


def frozen_site_delta(bank: LoraBank):
    """Summed delta of frozen adapters only: evaluates the previous model
    even after fresh (still zero) adapters were spawned."""
    def site_delta(key: SiteKey):
        ads = [a for a in bank.at(key) if a.frozen]
        if not ads:
            return None
        total = ads[0].delta()
        for ad_ in ads[1:]:
            total = total + ad_.delta()
        return total
    return site_delta


def trainable_site_delta(bank: LoraBank, leaves: dict[str, ad.Node]):
    """Site deltas where unfrozen factors come from graph leaves and frozen
    deltas stay constant."""
    def site_delta(key: SiteKey):
        layer, name = key
        total = None
        const = None
        for ad_ in bank.at(key):
            if ad_.frozen:
                const = ad_.delta() if const is None else const + ad_.delta()
        if const is not None:
            total = ad.constant(const)
        for ad_ in bank.at(key):
            if not ad_.frozen:
                a = leaves[f"lora/{layer}/{name}/{ad_.session}/a"]
                b = leaves[f"lora/{layer}/{name}/{ad_.session}/b"]
                prod = ad.matmul(a, b)
                total = prod if total is None else ad.add(total, prod)
        return total
    return site_delta


def forward_backward(weights: BackboneWeights, bank: LoraBank,
                     batch: np.ndarray, labels, head,
                     train_head: bool = False):
    """Mean cross-entropy over the batch plus gradients for every unfrozen
    adapter factor (and the head when train_head)."""
    from .training import head_leaves, head_logits  # local: avoid cycle

    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if batch.ndim != 3 or batch.shape[0] != labels.shape[0]:
        raise ShapeError("forward_backward: batch/labels disagree")
    leaves = adapter_leaves(bank)
    hl = head_leaves(head) if train_head else None
    sd = trainable_site_delta(bank, leaves)
    total = None
    for i in range(batch.shape[0]):
        enc = encode(weights, batch[i], site_delta=sd)
        logits = head_logits(head, enc.pooled, hl)
        ce = ad.cross_entropy_logits(logits, labels[i:i + 1])
        total = ce if total is None else ad.add(total, ce)
    loss = ad.scale(total, 1.0 / batch.shape[0])
    grads: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        ad.backward(loss)
        for name, node in leaves.items():
            grads[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
        if hl is not None:
            for name, node in hl.items():
                grads[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
    return float(loss.value[0, 0]), grads


def pretrain_surrogate(weights: BackboneWeights, clips: np.ndarray,
                       epochs: int, lr: float = 0.05, seed: int = 0,
                       mask_fraction: float = 0.5,
                       batch_size: int = 24) -> tuple[BackboneWeights, list[float]]:
    """Masked-patch reconstruction pretext: zero a random half of the
    patches, reconstruct their pixels from the encoded tokens through an
    auxiliary linear decoder (discarded on return). Mutates `weights`.
    Returns (weights, per-epoch mean loss)."""
    clips = np.asarray(clips, dtype=np.float64)
    cfg = weights.config
    n = clips.shape[0]
    p2 = cfg.patch * cfg.patch
    dec = rng.stream(seed, "pretext/decoder").normal(
        0.0, 1.0 / np.sqrt(cfg.dim), size=(cfg.dim, p2))
    n_tokens = (clips.shape[1] // cfg.patch) * (clips.shape[2] // cfg.patch)
    n_mask = max(1, int(round(mask_fraction * n_tokens)))
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.stream(seed, f"pretext/shuffle/{epoch}").permutation(n)
        mask_gen = rng.stream(seed, f"pretext/mask/{epoch}")
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            # fresh leaves per step: trainable unless the layer is frozen
            params = {}
            grads_of = {}
            pe_leaf = ad.leaf(weights.patch_embed)
            params["patch_embed"] = pe_leaf
            grads_of["patch_embed"] = (pe_leaf, weights.patch_embed)
            for li, blk in enumerate(weights.blocks):
                if weights.frozen[li]:
                    continue
                for name, arr in blk.named(li + 1):
                    node = ad.leaf(arr)
                    params[name] = node
                    grads_of[name] = (node, arr)
            dec_leaf = ad.leaf(dec)
            total = None
            for i in idx:
                masked = np.zeros(n_tokens, dtype=bool)
                masked[mask_gen.choice(n_tokens, size=n_mask, replace=False)] = True
                target = patchify(clips[i], cfg.patch)[masked]
                enc = encode(weights, clips[i], params=params, masked_tokens=masked)
                pred = ad.matmul(ad.select_rows(enc.layer_outputs[-1],
                                                np.flatnonzero(masked)), dec_leaf)
                loss_i = ad.scale(ad.squared_distance(pred, target),
                                  1.0 / (n_mask * p2))
                total = loss_i if total is None else ad.add(total, loss_i)
            loss = ad.scale(total, 1.0 / len(idx))
            ad.backward(loss)
            losses.append(float(loss.value[0, 0]))
            for node, arr in grads_of.values():
                if node.grad is not None:
                    arr -= lr * node.grad
            if dec_leaf.grad is not None:
                dec -= lr * dec_leaf.grad
        history.append(float(np.mean(losses)) if losses else 0.0)
    return weights, history
