"""Training loop: masking regimen, joint loss, AdamW, clipping, LR schedule.

The mean and MLP heads train with random modality masking (1/3 mask video,
1/3 mask audio, 1/3 no mask, i.i.d. per sample); the multi-view head trains
unmasked on a weighted sum of the per-modality arc-margin losses.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .arcmargin import arc_margin_loss_grad_batch, plain_cosine_logits
from .data import stack_samples
from .errors import ConfigurationError, ConsistencyError, DegenerateInputError
from .rng import substream

MASK_VIDEO = "mask_video"
MASK_AUDIO = "mask_audio"
MASK_NONE = "none"
_MASK_MODES = (MASK_VIDEO, MASK_AUDIO, MASK_NONE)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-08
    weight_decay: float = 0.01
    batch_size: int = 128
    max_epochs: int = 10
    clip_norm: float = 5.0
    lr_decay_factor: float = 0.95
    lambda_audio: float = 0.5
    lambda_video: float = 0.5
    mask_probabilities: tuple = (1 / 3, 1 / 3, 1 / 3)  # (video, audio, none)
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        for name in ("batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be > 0")
        if abs(sum(self.mask_probabilities) - 1.0) > 1e-9:
            raise ConfigurationError("mask probabilities must sum to 1")
        if any(p < 0 for p in self.mask_probabilities):
            raise ConfigurationError("mask probabilities must be >= 0")
        return self


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_accuracy: float
    lr: float
    is_best: bool


class AdamW:
    """Decoupled weight decay Adam over named parameter dicts."""

    def __init__(self, config: TrainingConfig):
        self.config = config
        self.first_moment = {}
        self.second_moment = {}
        self.step_count = 0

    def step(self, params: dict, grads: dict, lr: float):
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        for name in sorted(params):
            p = params[name]
            g = grads[name]
            if p.shape != np.shape(g):
                raise ConsistencyError(
                    f"gradient shape {np.shape(g)} does not match parameter "
                    f"{name} of shape {p.shape}"
                )
            m = self.first_moment.setdefault(name, np.zeros_like(p))
            v = self.second_moment.setdefault(name, np.zeros_like(p))
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * np.square(g)
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            p -= lr * cfg.weight_decay * p


def clip_global_norm(grads: dict, max_norm: float):
    """Scale all gradients by max_norm/global_norm when the norm exceeds it."""
    if max_norm <= 0:
        raise ConfigurationError("max_norm must be > 0")
    total = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if total <= max_norm:
        return grads, total
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}, total


def sample_mask_mode(rng, probabilities=(1 / 3, 1 / 3, 1 / 3)):
    """One of mask_video / mask_audio / none, i.i.d. per call."""
    return _MASK_MODES[rng.choice(3, p=np.asarray(probabilities))]


def sample_mask_modes(rng, n, probabilities=(1 / 3, 1 / 3, 1 / 3)):
    return [_MASK_MODES[i] for i in rng.choice(3, size=n, p=np.asarray(probabilities))]


def apply_masks(audio, video, modes):
    """Zero out the masked modality per sample, at the backbone boundary."""
    audio = np.array(audio, copy=True)
    video = np.array(video, copy=True)
    for i, mode in enumerate(modes):
        if mode == MASK_AUDIO:
            audio[i] = 0.0
        elif mode == MASK_VIDEO:
            video[i] = 0.0
        elif mode != MASK_NONE:
            raise ConfigurationError(f"unknown mask mode {mode!r}")
    return audio, video


def compute_batch_loss(head, arc_head, audio, video, labels, mask_modes=None,
                       train=True, rng=None):
    """Mean batch loss and gradients for one head/arc-margin composition.

    Returns (loss, grads) with gradient names prefixed "head." / "arc.".
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DegenerateInputError("empty batch")
    grads = {}
    if head.kind == "multiview":
        raise ConfigurationError(
            "use compute_multiview_batch_loss for the multi-view head"
        )
    if mask_modes is not None:
        audio, video = apply_masks(audio, video, mask_modes)
    emb, cache = head.forward(audio, video, train=train, rng=rng)
    loss, grad_emb, grad_protos, _ = arc_margin_loss_grad_batch(arc_head, emb, labels)
    head_grads, _, _ = head.backward(cache, grad_emb)
    for name, g in head_grads.items():
        grads[f"head.{name}"] = g
    grads["arc.prototypes"] = grad_protos
    return loss, grads


def compute_multiview_batch_loss(head, arc_head, audio, video, labels,
                                 lambda_audio=0.5, lambda_video=0.5,
                                 train=True, rng=None):
    """Weighted sum of the audio-path and video-path arc-margin losses."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DegenerateInputError("empty batch")
    emb_a, cache_a = head.forward_modality("audio", audio, train=train, rng=rng)
    emb_v, cache_v = head.forward_modality("video", video, train=train, rng=rng)
    loss_a, grad_a, protos_a, _ = arc_margin_loss_grad_batch(arc_head, emb_a, labels)
    loss_v, grad_v, protos_v, _ = arc_margin_loss_grad_batch(arc_head, emb_v, labels)
    grads_a, _ = head.backward_modality(cache_a, lambda_audio * grad_a)
    grads_v, _ = head.backward_modality(cache_v, lambda_video * grad_v)
    grads = {}
    for name, g in grads_a.items():
        grads[f"head.{name}"] = g
    for name, g in grads_v.items():
        key = f"head.{name}"
        grads[key] = grads.get(key, 0.0) + g
    grads["arc.prototypes"] = lambda_audio * protos_a + lambda_video * protos_v
    return lambda_audio * loss_a + lambda_video * loss_v, grads


def batch_loss(head, arc_head, audio, video, labels, config, mask_modes=None,
               train=True, rng=None):
    """Dispatch to the masked single-loss or multi-view joint loss."""
    if head.kind == "multiview":
        return compute_multiview_batch_loss(
            head, arc_head, audio, video, labels,
            config.lambda_audio, config.lambda_video, train=train, rng=rng,
        )
    return compute_batch_loss(
        head, arc_head, audio, video, labels, mask_modes, train=train, rng=rng
    )


def _full_modality_embeddings(head, audio, video):
    if head.kind == "multiview":
        emb, _ = head.forward_joint(audio, video, train=False)
    else:
        emb, _ = head.forward(audio, video, train=False)
    return emb


def validate_accuracy(head, arc_head, samples):
    """Argmax accuracy of margin-free cosine logits on unmasked inputs."""
    if not samples:
        raise DegenerateInputError("empty validation set")
    audio, video, labels, _ = stack_samples(samples)
    emb = _full_modality_embeddings(head, audio, video)
    logits = plain_cosine_logits(arc_head, emb)
    return float((logits.argmax(axis=1) == labels).mean())


def lr_schedule_update(accuracies, current_lr, decay_factor=0.95):
    """Multiply by the decay factor when the last epoch did not improve.

    `accuracies` is the list of validation accuracies for all completed
    epochs.  A tie with the best prior accuracy counts as non-improvement.
    """
    if not accuracies:
        raise ConfigurationError("need at least one completed epoch")
    last = accuracies[-1]
    prior = accuracies[:-1]
    if prior and last <= max(prior):
        return current_lr * decay_factor
    if not prior:
        return current_lr  # first epoch has nothing to compare against
    return current_lr


@dataclass
class TrainResult:
    best_head: object
    best_arc: object
    records: list = field(default_factory=list)
    best_epoch: int = -1


def train_run(head, arc_head, train_samples, val_samples, config: TrainingConfig):
    """Run the full training regimen and return the best-validation snapshot."""
    config.validate()
    train_ids = {s.sample_id for s in train_samples}
    if train_ids & {s.sample_id for s in val_samples}:
        raise ConfigurationError("train and validation splits must be disjoint")
    audio, video, labels, _ = stack_samples(train_samples)
    n = len(train_samples)
    shuffle_rng = substream(config.seed, "shuffle")
    mask_rng = substream(config.seed, "masking")
    dropout_rng = substream(config.seed, "dropout")
    optimizer = AdamW(config)
    params = {f"head.{k}": v for k, v in head.param_dict().items()}
    params["arc.prototypes"] = arc_head.prototypes

    lr = config.learning_rate
    best_acc = -1.0
    best_epoch = -1
    best_snapshot = None
    records = []
    accuracies = []
    for epoch in range(config.max_epochs):
        perm = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            modes = None
            if head.kind != "multiview":
                modes = sample_mask_modes(
                    mask_rng, len(idx), config.mask_probabilities
                )
            loss, grads = batch_loss(
                head, arc_head, audio[idx], video[idx], labels[idx],
                config, mask_modes=modes, train=True, rng=dropout_rng,
            )
            grads, _ = clip_global_norm(grads, config.clip_norm)
            optimizer.step(params, grads, lr)
            losses.append(loss)
        acc = validate_accuracy(head, arc_head, val_samples)
        accuracies.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_snapshot = (copy.deepcopy(head), copy.deepcopy(arc_head))
        records.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                val_accuracy=acc,
                lr=lr,
                is_best=False,
            )
        )
        lr = lr_schedule_update(accuracies, lr, config.lr_decay_factor)
    records[best_epoch].is_best = True
    return TrainResult(
        best_head=best_snapshot[0],
        best_arc=best_snapshot[1],
        records=records,
        best_epoch=best_epoch,
    )
