"""Brute-force cross-checks behind the `oracle` subcommand.

Each check recomputes a kernel result by an independent route: literal
loops, finite differences, one-shot closed forms, or hand-worked values.
They are deliberately slow and dumb; agreement is the point. The test
suite reuses several of these at tighter tolerances.
"""

import numpy as np

from .adapters import LoraBank
from .analytic import batch_ridge, expand_labels, init_state, update
from .backbone import BackboneConfig, forward, init_pretrained, lora_sites
from .boundary import BoundarySet, MaskSpec, perturb, reg_loss
from .fsa import linear_cka
from .msa import ProjectionBasis, compute_t3, project_gradient
from .numerics import autodiff as ad
from .numerics import linalg, rng

Check = tuple[str, bool, str]


def _gen(tag: str) -> np.random.Generator:
    return rng.stream(7100, tag)


def check_matmul() -> Check:
    gen = _gen("matmul")
    a = gen.normal(size=(7, 5))
    b = gen.normal(size=(5, 4))
    slow = np.zeros((7, 4))
    for i in range(7):
        for j in range(4):
            for k in range(5):
                slow[i, j] += a[i, k] * b[k, j]
    err = float(np.max(np.abs(linalg.matmul(a, b) - slow)))
    return "matmul vs triple loop", err <= 1e-12, f"max abs err {err:.2e}"


def check_sym_eig() -> Check:
    gen = _gen("eig")
    m = gen.normal(size=(6, 6))
    m = m @ m.T
    vals, vecs = linalg.sym_eig(m)
    recon = float(np.max(np.abs(vecs @ np.diag(vals) @ vecs.T - m)))
    ordered = bool(np.all(np.diff(vals) <= 1e-12))
    ok = recon <= 1e-9 and ordered
    return ("eigendecomposition reconstructs", ok,
            f"recon err {recon:.2e}, descending={ordered}")


def check_autodiff_fd() -> Check:
    gen = _gen("fd")
    w1 = ad.leaf(gen.normal(size=(3, 4)))
    w2 = ad.leaf(gen.normal(size=(4, 2)))
    x = gen.normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])

    def loss_value(v1, v2):
        h = np.maximum(x @ v1, 0.0) @ v2
        shifted = h - h.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -float(np.mean(logp[np.arange(5), y]))

    hidden = ad.relu(ad.matmul(ad.constant(x), w1))
    loss = ad.cross_entropy_logits(ad.matmul(hidden, w2), y)
    loss.backward()
    worst = 0.0
    for leaf, v in ((w1, w1.value), (w2, w2.value)):
        for idx in np.ndindex(v.shape):
            vp, vm = v.copy(), v.copy()
            vp[idx] += 1e-5
            vm[idx] -= 1e-5
            if leaf is w1:
                fd = (loss_value(vp, w2.value) - loss_value(vm, w2.value)) / 2e-5
            else:
                fd = (loss_value(w1.value, vp) - loss_value(w1.value, vm)) / 2e-5
            an = leaf.grad[idx]
            worst = max(worst, abs(an - fd) / max(1.0, abs(fd)))
    return ("backprop vs finite differences", worst <= 1e-4,
            f"worst rel err {worst:.2e}")


def check_recursive_hand_case() -> Check:
    state = init_state(2, gamma=1.0)
    expand_labels(state, 1)
    update(state, np.array([[1.0, 0.0]]), np.array([[1.0]]))
    r_want = np.array([[0.5, 0.0], [0.0, 1.0]])
    w_want = np.array([[0.5], [0.0]])
    err = max(float(np.max(np.abs(state.r - r_want))),
              float(np.max(np.abs(state.w_hat - w_want))))
    return ("single-sample recursive update", err <= 1e-12,
            f"max abs err {err:.2e}")


def check_recursion_vs_ridge() -> Check:
    gen = _gen("ridge")
    chunks = [(gen.normal(size=(9, 16)), gen.integers(0, 3, size=9))
              for _ in range(3)]
    state = init_state(16, gamma=0.7)
    expand_labels(state, 3)
    for z, y in chunks:
        onehot = np.eye(3)[y]
        update(state, z, onehot)
    z_all = np.concatenate([z for z, _ in chunks])
    y_all = np.concatenate([np.eye(3)[y] for _, y in chunks])
    w_direct = batch_ridge(z_all, y_all, 0.7)
    err = float(np.max(np.abs(state.w_hat - w_direct)))
    return ("recursion equals one-shot ridge", err <= 1e-8,
            f"max abs err {err:.2e}")


def check_cka() -> Check:
    gen = _gen("cka")
    x = gen.normal(size=(200, 16))
    y = gen.normal(size=(200, 16))
    self_sim = linear_cka(x, 3.0 * x + 1.0)  # scale/shift invariant
    cross = linear_cka(x, y)
    ok = abs(self_sim - 1.0) <= 1e-10 and cross < 0.9
    return ("similarity index bounds", ok,
            f"self {self_sim:.6f}, independent {cross:.4f}")


def check_adapter_merge() -> Check:
    cfg = BackboneConfig(layers=2, dim=8, patch=4, mlp_hidden=12)
    weights = init_pretrained(cfg, seed=3)
    bank = LoraBank()
    bank.spawn(lora_sites(weights), session=1, rank=2, seed=5)
    gen = _gen("merge")
    for ads in bank.adapters.values():
        for a in ads:
            a.b[...] = gen.normal(size=a.b.shape) * 0.1
    x = gen.normal(size=(12, 4))
    with_bank = forward(weights, bank, x).pooled
    merged = weights.copy()
    for blk_i, blk in enumerate(merged.blocks, start=1):
        blk.wo += bank.effective_delta((blk_i, "attn_out"), cfg.dim, cfg.dim)
        blk.mlp_in += bank.effective_delta((blk_i, "mlp_in"), cfg.dim,
                                           cfg.mlp_hidden)
    direct = forward(merged, None, x).pooled
    err = float(np.max(np.abs(with_bank - direct)))
    return ("adapter bank equals merged weights", err <= 1e-10,
            f"max abs err {err:.2e}")


def check_projection() -> Check:
    gen = _gen("proj")
    u, _ = np.linalg.qr(gen.normal(size=(10, 3)))
    basis = ProjectionBasis(site=(1, "mlp_in"), u=u,
                            eigenvalues=np.ones(3), kept_energy=1.0)
    in_span = (u @ gen.normal(size=(3, 4))).T      # rows in span
    out_span = gen.normal(size=(4, 10))
    out_span -= project_gradient(out_span, basis)  # rows in complement
    keep = float(np.max(np.abs(project_gradient(in_span, basis) - in_span)))
    kill = float(np.max(np.abs(project_gradient(out_span, basis))))
    ok = keep <= 1e-10 and kill <= 1e-10
    return ("projector keeps span, kills complement", ok,
            f"keep err {keep:.2e}, leak {kill:.2e}")


def check_t3_table() -> Check:
    cases = [
        ([240, 160], 220, 2),
        ([5120], 220, 1),
        ([16000], 220, 1),
        ([16] * 40, 220, 14),
        ([21] * 21, 220, 10),
        ([120, 120, 120], 220, 2),
    ]
    for counts, budget, want in cases:
        got = compute_t3(counts, budget)
        if got != want:
            return ("stage-cut table", False,
                    f"counts {counts[:3]}..: got {got}, want {want}")
    return "stage-cut table", True, f"{len(cases)} cases match"


def check_mask_counts() -> Check:
    spec = MaskSpec(max_time_ratio=0.5, max_freq_ratio=0.5, count=4, seed=11)
    x = np.ones((32, 8))
    gen = rng.stream(spec.seed, "oracle/mask")
    variants = perturb(x, spec, gen)
    for k in range(4):
        v = variants[k]
        # a row only zeroes via the time band (freq band covers <= half)
        zero_rows = int(np.sum(np.all(v == 0.0, axis=1)))
        zero_cols = int(np.sum(np.all(v == 0.0, axis=0)))
        if zero_rows > 16 or zero_cols > 4:
            return ("mask band widths", False,
                    f"bands ({zero_rows}, {zero_cols}) over the half caps")
        rows = np.flatnonzero(np.all(v == 0.0, axis=1))
        if zero_rows > 1 and not np.all(np.diff(rows) == 1):
            return "mask band widths", False, "time band not contiguous"
    return "mask band widths", True, "4 variants, bands contiguous and capped"


def check_reg_hand_case() -> Check:
    clean = np.array([[1.0, 0.0]])
    variant = np.array([[0.0, 1.0]])
    centroid = np.array([[1.0, 0.0]])
    boundary = BoundarySet(features=np.array([[0.0, -1.0]]),
                           source_ids=[0])
    nodes = [ad.constant(clean), ad.constant(variant)]
    got = float(reg_loss(nodes, centroid, boundary, margin=0.25).value)
    # dispersion (0 + 2)/2 = 1, nearest anchor dist 1 + 1 = 2
    want = max(0.0, 0.25 + 1.0 - 2.0)
    # and with a margin large enough to clear the hinge
    got2 = float(reg_loss(nodes, centroid, boundary, margin=1.5).value)
    want2 = 1.5 + 1.0 - 2.0
    ok = abs(got - want) <= 1e-12 and abs(got2 - want2) <= 1e-12
    return ("margin loss hand case", ok,
            f"got ({got:.3f}, {got2:.3f}), want ({want:.3f}, {want2:.3f})")


def check_state_stays_spd() -> Check:
    gen = _gen("spd")
    state = init_state(12, gamma=1.0)
    expand_labels(state, 2)
    worst_asym, worst_eig = 0.0, np.inf
    for _ in range(5):
        z = gen.normal(size=(20, 12))
        y = np.eye(2)[gen.integers(0, 2, size=20)]
        update(state, z, y)
        worst_asym = max(worst_asym,
                         float(np.max(np.abs(state.r - state.r.T))))
        worst_eig = min(worst_eig,
                        float(np.min(np.linalg.eigvalsh(state.r))))
    ok = worst_asym <= 1e-12 and worst_eig > 0.0
    return ("running inverse stays symmetric PD", ok,
            f"asym {worst_asym:.2e}, min eig {worst_eig:.2e}")


def run_all() -> list[Check]:
    checks = [
        check_matmul,
        check_sym_eig,
        check_autodiff_fd,
        check_recursive_hand_case,
        check_recursion_vs_ridge,
        check_state_stays_spd,
        check_cka,
        check_adapter_merge,
        check_projection,
        check_t3_table,
        check_mask_counts,
        check_reg_hand_case,
    ]
    return [c() for c in checks]
