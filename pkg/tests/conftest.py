"""Shared test helpers: finite-difference oracles and small data builders."""

import numpy as np
import pytest

from avfusion.arcmargin import ArcMarginHead, arc_margin_loss_grad_batch
from avfusion.data import DatasetConfig, generate_identities, sample_dataset
from avfusion.heads import MeanFusionHead, MlpFusionHead, MultiViewHead


def make_head(kind, rng, d_a=16, d_v=32, d_e=8, hidden=24, dropout_p=0.1):
    if kind == "mean":
        return MeanFusionHead.create(rng, d_a, d_v, d_e, dropout_p)
    if kind == "mlp":
        return MlpFusionHead.create(rng, d_a, d_v, d_e, hidden, dropout_p)
    if kind == "multiview":
        return MultiViewHead.create(rng, d_a, d_v, d_e, dropout_p)
    raise ValueError(kind)


def draw_fixed_masks(head, rng, n):
    """Pre-drawn dropout masks so forward passes replay deterministically."""
    masks = {
        "audio": head.dropout.draw_mask(rng, (n, head.d_a)),
        "video": head.dropout.draw_mask(rng, (n, head.d_v)),
    }
    if head.kind == "mlp":
        hidden = head.layers[0].out_dim
        masks["h1"] = head.dropout.draw_mask(rng, (n, hidden))
        masks["h2"] = head.dropout.draw_mask(rng, (n, hidden))
    if head.kind == "multiview":
        masks["audio"] = head.dropout.draw_mask(rng, (n, head.d_e))
        masks["video"] = head.dropout.draw_mask(rng, (n, head.d_e))
    return masks


def composed_loss(head, arc, audio, video, labels, masks):
    """Train-mode head + arc-margin loss with replayed dropout masks."""
    if head.kind == "multiview":
        emb_a, _ = head.forward_modality("audio", audio, train=True, masks=masks)
        emb_v, _ = head.forward_modality("video", video, train=True, masks=masks)
        loss_a, *_ = arc_margin_loss_grad_batch(arc, emb_a, labels)
        loss_v, *_ = arc_margin_loss_grad_batch(arc, emb_v, labels)
        return 0.5 * loss_a + 0.5 * loss_v
    kwargs = {"update_running": False} if head.kind == "mlp" else {}
    emb, _ = head.forward(audio, video, train=True, masks=masks, **kwargs)
    loss, *_ = arc_margin_loss_grad_batch(arc, emb, labels)
    return loss


def composed_grads(head, arc, audio, video, labels, masks):
    """Analytic gradients of composed_loss for every parameter."""
    grads = {}
    if head.kind == "multiview":
        emb_a, cache_a = head.forward_modality("audio", audio, train=True, masks=masks)
        emb_v, cache_v = head.forward_modality("video", video, train=True, masks=masks)
        _, ga, pa, _ = arc_margin_loss_grad_batch(arc, emb_a, labels)
        _, gv, pv, _ = arc_margin_loss_grad_batch(arc, emb_v, labels)
        grads_a, _ = head.backward_modality(cache_a, 0.5 * ga)
        grads_v, _ = head.backward_modality(cache_v, 0.5 * gv)
        for name, g in grads_a.items():
            grads[f"head.{name}"] = g
        for name, g in grads_v.items():
            key = f"head.{name}"
            grads[key] = grads.get(key, 0.0) + g
        grads["arc.prototypes"] = 0.5 * pa + 0.5 * pv
        return grads
    kwargs = {"update_running": False} if head.kind == "mlp" else {}
    emb, cache = head.forward(audio, video, train=True, masks=masks, **kwargs)
    _, grad_emb, grad_protos, _ = arc_margin_loss_grad_batch(arc, emb, labels)
    head_grads, _, _ = head.backward(cache, grad_emb)
    for name, g in head_grads.items():
        grads[f"head.{name}"] = g
    grads["arc.prototypes"] = grad_protos
    return grads


def gradient_check(head, arc, audio, video, labels, masks, step=1e-5):
    """Max norm-relative error between analytic and central finite differences."""
    analytic = composed_grads(head, arc, audio, video, labels, masks)
    params = {f"head.{k}": v for k, v in head.param_dict().items()}
    params["arc.prototypes"] = arc.prototypes
    worst = 0.0
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = composed_loss(head, arc, audio, video, labels, masks)
            flat[i] = orig - step
            down = composed_loss(head, arc, audio, video, labels, masks)
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * step)
        a = np.asarray(analytic[name], dtype=np.float64)
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        err = np.linalg.norm(a - numeric) / denom
        worst = max(worst, err)
    return worst


def eer_oracle(scores, labels):
    """Brute-force EER: FAR/FRR at every midpoint between sorted scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    targets = scores[labels]
    nontargets = scores[~labels]
    uniq = np.sort(np.unique(scores))
    candidates = [uniq[0] - 1.0]
    candidates.extend((uniq[:-1] + uniq[1:]) / 2)
    candidates.append(uniq[-1] + 1.0)
    far = np.array([(nontargets >= t).mean() for t in candidates])
    frr = np.array([(targets < t).mean() for t in candidates])
    diff = far - frr
    for i in range(len(candidates)):
        if diff[i] == 0.0:
            return float(far[i])
        if diff[i] > 0.0 and i + 1 < len(candidates) and diff[i + 1] < 0.0:
            alpha = diff[i] / (diff[i] - diff[i + 1])
            return float(frr[i] + alpha * (frr[i + 1] - frr[i]))
    raise AssertionError("oracle found no FAR/FRR crossing")


def small_dataset(n_identities=8, samples_per_identity=6, seed=0,
                  audio_sigma=0.2, video_sigma=0.1):
    config = DatasetConfig(
        n_identities=n_identities,
        samples_per_identity=samples_per_identity,
        audio_noise_sigma=audio_sigma,
        video_noise_sigma=video_sigma,
        seed=seed,
    )
    return sample_dataset(generate_identities(config), config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
