"""Self-contained invariant and oracle suite behind ``swarmtrack selfcheck``.

Each check returns (name, passed, detail); exit code 0 means everything
passed.  This mirrors the heavier pytest suite at reduced trial counts so a
deployment can validate itself without a test harness.
"""

from __future__ import annotations

import numpy as np

from . import kernels, reference
from .detection import AppearanceEmbedder, DetectionHead, HeadConfig, association_loss, detection_losses
from .fusion import CrossAttentionFuser, splat_predictive_map
from .nn import CausalConv1d, Linear, MultiHeadAttention, SGD, Parameter
from .predictor import PredictorConfig, SwarmPredictor, SwarmWindow, motion_loss
from .tensor import Tensor, grad_check, softmax, stack, unit_normalize


def _random_window(rng, n=3, steps=8, dim=8, spread=30.0):
    pos = rng.normal(size=(n, steps, 2)) * spread + 64
    emb = rng.normal(size=(n, steps, dim))
    ids = list(rng.permutation(np.arange(1, n + 1)))
    return SwarmWindow.from_positions(pos, emb, ids)


def check_softmax(rng):
    x = Tensor(rng.normal(size=(40, 9)))
    s = softmax(x, axis=1).data
    dev = np.abs(s.sum(axis=1) - 1.0).max()
    shifted = softmax(Tensor(x.data + 7.25), axis=1).data
    shift_dev = np.abs(s - shifted).max()
    return dev < 1e-12 and shift_dev < 1e-12, f"row-sum dev {dev:.1e}, shift dev {shift_dev:.1e}"


def check_linear_oracle(rng):
    layer = Linear(5, 3, rng)
    x = rng.normal(size=(4, 5))
    got = layer(Tensor(x)).data
    ref = reference.linear_reference(x, layer.weight.data, layer.bias.data)
    dev = np.abs(got - ref).max()
    return dev < 1e-10, f"max dev {dev:.1e}"


def check_attention_oracle(rng):
    worst = 0.0
    for _ in range(5):
        layer = MultiHeadAttention(6, 6, 6, 6, 2, rng)
        q = rng.normal(size=(2, 3, 6))
        k = rng.normal(size=(2, 4, 6))
        got = layer(Tensor(q), Tensor(k), Tensor(k)).data
        ref = reference.mha_reference(layer, q, k, k)
        worst = max(worst, float(np.abs(got - ref).max()))
    return worst < 1e-10, f"max dev {worst:.1e}"


def check_conv_oracle(rng):
    layer = CausalConv1d(3, 2, 3, 2, rng)
    x = rng.normal(size=(2, 9, 3))
    got = layer(Tensor(x)).data
    ref = reference.conv_reference(layer, x)
    dev = float(np.abs(got - ref).max())
    causal = True
    for _ in range(100):
        t = int(rng.integers(1, 9))
        bumped = x.copy()
        bumped[:, t:] += rng.normal(size=bumped[:, t:].shape)
        out2 = layer(Tensor(bumped)).data
        causal &= bool(np.array_equal(out2[:, :t], got[:, :t]))
    return dev < 1e-10 and causal, f"max dev {dev:.1e}, causal {causal}"


def check_splat_oracle(rng):
    centers = rng.uniform(0, 80, size=(4, 2))
    feats = rng.normal(size=(4, 3))
    got = splat_predictive_map((9, 11, 3), Tensor(centers), Tensor(feats), 1.5, 8.0).data
    ref = reference.splat_reference((9, 11, 3), centers, feats, 1.5, 8.0)
    dev = float(np.abs(got - ref).max())
    return dev < 1e-10, f"max dev {dev:.1e}"


def check_fuse_oracle(rng):
    fuser = CrossAttentionFuser(4, 2, rng)
    cur = rng.normal(size=(9, 4))
    pred = rng.normal(size=(9, 4))
    got = fuser(Tensor(cur), Tensor(pred)).data
    ref = reference.fuse_reference(fuser, cur, pred)
    dev = float(np.abs(got - ref).max())
    return dev < 1e-10, f"max dev {dev:.1e}"


def check_predictor_oracle(rng):
    cfg = PredictorConfig(feature_dim=8, heads=2, embed_dim=4, history_len=6, horizon=4)
    model = SwarmPredictor(cfg, rng)
    window = _random_window(rng, n=4, steps=6, dim=4)
    got = model(window).positions
    ref = reference.predictor_reference(model, window)
    dev = float(np.abs(got - ref).max())
    perm = list(rng.permutation(window.count))
    exact = np.array_equal(model(window.permuted(perm)).positions, got[perm])
    return dev < 1e-10 and exact, f"oracle dev {dev:.1e}, equivariance exact {exact}"


def check_gradients(rng):
    cfg = PredictorConfig(feature_dim=8, heads=2, embed_dim=4, history_len=5, horizon=3)
    model = SwarmPredictor(cfg, rng)
    window = _random_window(rng, n=3, steps=5, dim=4, spread=15.0)
    target = rng.normal(size=(3, 3, 2)) * 15 + 64
    rep = grad_check(
        lambda: motion_loss(model.predict_tensor(window), target), model.parameters()
    )
    if not rep.ok:
        return False, rep.summary()

    fuser = CrossAttentionFuser(4, 2, rng)
    centers = Tensor(rng.uniform(8, 40, size=(2, 2)), requires_grad=True)
    feats = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    cur = rng.normal(size=(30, 4))

    def fuse_loss():
        pmap = splat_predictive_map((5, 6, 4), centers, feats, 1.5, 8.0)
        return fuser(Tensor(cur), pmap.reshape(30, 4)).sigmoid().mean()

    params = dict(fuser.parameters())
    params.update({"centers": centers, "feats": feats})
    rep2 = grad_check(fuse_loss, params)
    if not rep2.ok:
        return False, rep2.summary()

    head = DetectionHead([4, 4], [8, 16], HeadConfig(), rng)
    grids = [Tensor(rng.normal(size=(6, 6, 4))), Tensor(rng.normal(size=(3, 3, 4)))]
    gt = np.array([[20.0, 28.0, 10.0, 12.0]])
    rep3 = grad_check(
        lambda: detection_losses(head, grids, gt).total, head.parameters()
    )
    if not rep3.ok:
        return False, rep3.summary()

    embedder = AppearanceEmbedder(4, 4, rng)
    raw = rng.normal(size=(6, 6, 4))
    means = Tensor(rng.normal(size=(2, 4)), requires_grad=True)

    def asso():
        e = stack(
            [embedder.embed(raw, [16, 16, 8, 8], 8), embedder.embed(raw, [30, 30, 8, 8], 8)],
            axis=0,
        )
        return association_loss([(e, np.array([0, 1]))], means)

    params4 = dict(embedder.parameters())
    params4["means"] = means
    rep4 = grad_check(asso, params4)
    if not rep4.ok:
        return False, rep4.summary()
    worst = max(r.max_rel_error for r in (rep, rep2, rep3, rep4))
    return True, f"4 paths, worst rel err {worst:.1e}"


def check_assignment(rng):
    for _ in range(200):
        rows = int(rng.integers(1, 7))
        cols = int(rng.integers(1, 7))
        sim = rng.random((rows, cols))
        r, c = kernels.lsap_minimize(-sim)
        best, _ = reference.assignment_reference(sim)
        if abs(float(sim[r, c].sum()) - best) > 1e-12:
            return False, f"mismatch on {rows}x{cols}"
    return True, "200 random matrices up to 6x6"


def _random_sequences(rng):
    frames = int(rng.integers(2, 6))
    gt, pred = {}, {}
    for f in range(frames):
        gt[f] = [
            (gid, rng.uniform(10, 90, size=2).tolist() + rng.uniform(6, 14, size=2).tolist())
            for gid in range(1, int(rng.integers(1, 4)) + 1)
            if rng.random() > 0.2
        ]
        pred[f] = [
            (pid, rng.uniform(10, 90, size=2).tolist() + rng.uniform(6, 14, size=2).tolist())
            for pid in range(1, int(rng.integers(1, 4)) + 1)
            if rng.random() > 0.2
        ]
    return gt, pred


def check_metrics(rng):
    from . import metrics

    alphas = (0.25, 0.5, 0.75)
    for trial in range(60):
        gt, pred = _random_sequences(rng)
        if not any(gt.values()):
            continue
        counts = metrics.accumulate_clear(gt, pred)
        fp, fn, idsw, gt_count, mota_ref = reference.clear_reference(gt, pred)
        if (counts.fp, counts.fn, counts.idsw, counts.gt) != (fp, fn, idsw, gt_count):
            return False, f"CLEAR mismatch on trial {trial}"
        if abs(metrics.idf1(gt, pred) - reference.idf1_reference(gt, pred)) > 1e-12:
            return False, f"IDF1 mismatch on trial {trial}"
        hota_fast, _, _ = metrics.hota(gt, pred, alphas)
        if abs(hota_fast - reference.hota_reference(gt, pred, alphas)) > 1e-12:
            return False, f"HOTA mismatch on trial {trial}"
    return True, "60 random sequences, CLEAR/IDF1/HOTA exact"


def check_sgd(rng):
    theta = Parameter(np.array([1.0]))
    opt = SGD({"theta": theta}, lr=0.1, momentum=0.9)
    theta.grad = np.array([1.0])
    opt.step()
    first = 1.0 - theta.data[0]
    theta.grad = np.array([1.0])
    opt.step()
    second = (1.0 - first) - theta.data[0]
    ok = abs(first - 0.1) < 1e-15 and abs(second - 0.19) < 1e-15
    return ok, f"step magnitudes {first:.3f}, {second:.3f}"


CHECKS = [
    ("softmax normalization and shift invariance", check_softmax),
    ("linear map vs triple-loop oracle", check_linear_oracle),
    ("multi-head attention vs per-head loop oracle", check_attention_oracle),
    ("causal conv vs tap-loop oracle + causality", check_conv_oracle),
    ("predictive splat vs full-scan oracle", check_splat_oracle),
    ("cross-attention fuse vs loop oracle", check_fuse_oracle),
    ("swarm predictor vs loop oracle + equivariance", check_predictor_oracle),
    ("gradient checks on all trainable paths", check_gradients),
    ("assignment vs brute-force enumeration", check_assignment),
    ("metrics vs enumeration references", check_metrics),
    ("sgd momentum recurrence", check_sgd),
]


def run_selfcheck(seed=0, out=print):
    failures = 0
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # surfaced as a failure, not a crash
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        out(f"[{status}] {name}: {detail}")
        failures += 0 if ok else 1
    out(f"selfcheck: {len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1
