"""The three fusion heads: mean, MLP, and multi-view.

Every head works on batches of shape (N, dim).  A missing ("null") modality
is passed as None and materializes as an all-zeros input at the head
boundary, which is what the heads are trained to interpret via masking.

Forward passes return (embeddings, cache); the cache replays dropout masks
and batch statistics exactly in the matching backward pass.  Parameter
gradients are returned in a flat dict keyed like the param_dict() entries.
"""

import numpy as np

from .errors import ConsistencyError, DegenerateInputError, ShapeError
from .layers import (
    BatchNormLayer,
    DropoutSpec,
    LinearLayer,
    leaky_relu,
    leaky_relu_backward,
)

DEFAULT_LEAKY_SLOPE = 0.01

# Full-scale dims: audio 356, video 2048, embedding 256, MLP hidden 1330.
FULL_DIMS = {"d_a": 356, "d_v": 2048, "d_e": 256, "hidden": 1330}
DESK_DIMS = {"d_a": 16, "d_v": 32, "d_e": 8, "hidden": 24}


def _materialize(x, n, dim):
    """Replace a None modality by the all-zeros batch."""
    if x is None:
        return np.zeros((n, dim))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected batch of dim {dim}, got shape {x.shape}")
    return x


def _batch_size(audio, video, n=None):
    for x in (audio, video):
        if x is not None:
            return np.asarray(x).shape[0]
    if n is None:
        raise DegenerateInputError("both modalities are null and no batch size given")
    return n


class MeanFusionHead:
    """Separate linear projections per modality, averaged."""

    kind = "mean"

    def __init__(self, proj_audio, proj_video, dropout=None):
        if proj_audio.out_dim != proj_video.out_dim:
            raise ShapeError("audio/video projections must share the output dim")
        self.proj_audio = proj_audio
        self.proj_video = proj_video
        self.dropout = dropout or DropoutSpec()

    @classmethod
    def create(cls, rng, d_a, d_v, d_e, dropout_p=0.1):
        return cls(
            LinearLayer.create(rng, d_a, d_e),
            LinearLayer.create(rng, d_v, d_e),
            DropoutSpec(dropout_p),
        )

    @property
    def d_a(self):
        return self.proj_audio.in_dim

    @property
    def d_v(self):
        return self.proj_video.in_dim

    @property
    def d_e(self):
        return self.proj_audio.out_dim

    def param_dict(self):
        return {
            "proj_audio.weight": self.proj_audio.weight,
            "proj_audio.bias": self.proj_audio.bias,
            "proj_video.weight": self.proj_video.weight,
            "proj_video.bias": self.proj_video.bias,
        }

    def set_param(self, name, value):
        parts = name.split(".")
        obj = getattr(self, parts[0])
        setattr(obj, parts[1], value)

    def forward(self, audio, video, train=False, rng=None, masks=None, n=None):
        n = _batch_size(audio, video, n)
        a = _materialize(audio, n, self.d_a)
        v = _materialize(video, n, self.d_v)
        masks = masks or {}
        a, mask_a = self.dropout.apply(a, train, rng, masks.get("audio"))
        v, mask_v = self.dropout.apply(v, train, rng, masks.get("video"))
        pa, cache_a = self.proj_audio.forward(a)
        pv, cache_v = self.proj_video.forward(v)
        out = 0.5 * (pa + pv)
        cache = {
            "kind": self.kind,
            "head": id(self),
            "a": cache_a,
            "v": cache_v,
            "mask_a": mask_a,
            "mask_v": mask_v,
        }
        return out, cache

    def backward(self, cache, dout):
        _check_cache(self, cache)
        dpa = 0.5 * dout
        da, dwa, dba = self.proj_audio.backward(cache["a"], dpa)
        dv, dwv, dbv = self.proj_video.backward(cache["v"], dpa)
        if cache["mask_a"] is not None:
            da = da * cache["mask_a"]
        if cache["mask_v"] is not None:
            dv = dv * cache["mask_v"]
        grads = {
            "proj_audio.weight": dwa,
            "proj_audio.bias": dba,
            "proj_video.weight": dwv,
            "proj_video.bias": dbv,
        }
        return grads, da, dv


class MlpFusionHead:
    """Concatenated modalities through a 3-layer MLP.

    Each layer is linear -> leaky ReLU -> batch norm, with dropout after the
    batch norm of the first two layers.  Input dropout is applied to the two
    modality embeddings before concatenation, as in the mean head.
    """

    kind = "mlp"

    def __init__(self, layers, norms, dropout=None, leaky_slope=DEFAULT_LEAKY_SLOPE):
        self.layers = list(layers)
        self.norms = list(norms)
        if len(self.layers) != 3 or len(self.norms) != 3:
            raise ShapeError("MLP head has exactly three linear+norm stages")
        self.dropout = dropout or DropoutSpec()
        self.leaky_slope = leaky_slope
        self._d_a = None  # set by create / checkpoint load
        self._d_v = None

    @classmethod
    def create(cls, rng, d_a, d_v, d_e, hidden, dropout_p=0.1,
               leaky_slope=DEFAULT_LEAKY_SLOPE):
        dims = [d_a + d_v, hidden, hidden, d_e]
        layers = [
            LinearLayer.create(rng, dims[i], dims[i + 1]) for i in range(3)
        ]
        norms = [BatchNormLayer.create(dims[i + 1]) for i in range(3)]
        head = cls(layers, norms, DropoutSpec(dropout_p), leaky_slope)
        head._d_a = d_a
        head._d_v = d_v
        return head

    @property
    def d_a(self):
        return self._d_a

    @property
    def d_v(self):
        return self._d_v

    @property
    def d_e(self):
        return self.layers[2].out_dim

    def param_dict(self):
        params = {}
        for i, (lin, bn) in enumerate(zip(self.layers, self.norms), start=1):
            params[f"layer{i}.weight"] = lin.weight
            params[f"layer{i}.bias"] = lin.bias
            params[f"bn{i}.gamma"] = bn.gamma
            params[f"bn{i}.beta"] = bn.beta
        return params

    def set_param(self, name, value):
        prefix, attr = name.split(".")
        idx = int(prefix[-1]) - 1
        obj = self.layers[idx] if prefix.startswith("layer") else self.norms[idx]
        setattr(obj, attr, value)

    def forward(self, audio, video, train=False, rng=None, masks=None, n=None,
                update_running=True):
        n = _batch_size(audio, video, n)
        a = _materialize(audio, n, self.d_a)
        v = _materialize(video, n, self.d_v)
        masks = masks or {}
        a, mask_a = self.dropout.apply(a, train, rng, masks.get("audio"))
        v, mask_v = self.dropout.apply(v, train, rng, masks.get("video"))
        x = np.concatenate([a, v], axis=1)
        stage_caches = []
        for i in range(3):
            z, lin_cache = self.layers[i].forward(x)
            r, relu_mask = leaky_relu(z, self.leaky_slope)
            b, bn_cache = self.norms[i].forward(r, train, update_running)
            drop_mask = None
            if i < 2:
                b, drop_mask = self.dropout.apply(
                    b, train, rng, masks.get(f"h{i + 1}")
                )
            stage_caches.append((lin_cache, relu_mask, bn_cache, drop_mask))
            x = b
        cache = {
            "kind": self.kind,
            "head": id(self),
            "stages": stage_caches,
            "mask_a": mask_a,
            "mask_v": mask_v,
        }
        return x, cache

    def backward(self, cache, dout):
        _check_cache(self, cache)
        grads = {}
        dx = dout
        for i in reversed(range(3)):
            lin_cache, relu_mask, bn_cache, drop_mask = cache["stages"][i]
            if drop_mask is not None:
                dx = dx * drop_mask
            dx, dgamma, dbeta = self.norms[i].backward(bn_cache, dx)
            dx = leaky_relu_backward(relu_mask, self.leaky_slope, dx)
            dx, dweight, dbias = self.layers[i].backward(lin_cache, dx)
            grads[f"layer{i + 1}.weight"] = dweight
            grads[f"layer{i + 1}.bias"] = dbias
            grads[f"bn{i + 1}.gamma"] = dgamma
            grads[f"bn{i + 1}.beta"] = dbeta
        da = dx[:, : self.d_a]
        dv = dx[:, self.d_a :]
        if cache["mask_a"] is not None:
            da = da * cache["mask_a"]
        if cache["mask_v"] is not None:
            dv = dv * cache["mask_v"]
        return grads, da, dv


class MultiViewHead:
    """Per-modality projections into a shared classification layer.

    Each modality is processed separately: projection -> shared linear layer
    -> ReLU -> (train-time) dropout.  The joint two-modality embedding is the
    mean of the two single-modality embeddings.
    """

    kind = "multiview"

    def __init__(self, proj_audio, proj_video, shared_classifier, dropout=None):
        if proj_audio.out_dim != proj_video.out_dim:
            raise ShapeError("audio/video projections must share the output dim")
        if shared_classifier.in_dim != shared_classifier.out_dim:
            raise ShapeError("shared classifier must be square")
        if shared_classifier.in_dim != proj_audio.out_dim:
            raise ShapeError("shared classifier dim must match the projections")
        self.proj_audio = proj_audio
        self.proj_video = proj_video
        self.shared_classifier = shared_classifier
        self.dropout = dropout or DropoutSpec()

    @classmethod
    def create(cls, rng, d_a, d_v, d_e, dropout_p=0.1):
        return cls(
            LinearLayer.create(rng, d_a, d_e),
            LinearLayer.create(rng, d_v, d_e),
            LinearLayer.create(rng, d_e, d_e),
            DropoutSpec(dropout_p),
        )

    @property
    def d_a(self):
        return self.proj_audio.in_dim

    @property
    def d_v(self):
        return self.proj_video.in_dim

    @property
    def d_e(self):
        return self.shared_classifier.out_dim

    def param_dict(self):
        return {
            "proj_audio.weight": self.proj_audio.weight,
            "proj_audio.bias": self.proj_audio.bias,
            "proj_video.weight": self.proj_video.weight,
            "proj_video.bias": self.proj_video.bias,
            "shared_classifier.weight": self.shared_classifier.weight,
            "shared_classifier.bias": self.shared_classifier.bias,
        }

    def set_param(self, name, value):
        parts = name.split(".")
        obj = getattr(self, parts[0])
        setattr(obj, parts[1], value)

    def forward_modality(self, modality, x, train=False, rng=None, masks=None):
        if modality not in ("audio", "video"):
            raise ShapeError(f"unknown modality {modality!r}")
        proj = self.proj_audio if modality == "audio" else self.proj_video
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != proj.in_dim:
            raise ShapeError(
                f"{modality} input must have dim {proj.in_dim}, got shape {x.shape}"
            )
        masks = masks or {}
        p, proj_cache = proj.forward(x)
        c, shared_cache = self.shared_classifier.forward(p)
        relu_mask = c >= 0
        r = np.where(relu_mask, c, 0.0)
        out, drop_mask = self.dropout.apply(r, train, rng, masks.get(modality))
        cache = {
            "kind": self.kind,
            "head": id(self),
            "modality": modality,
            "proj": proj_cache,
            "shared": shared_cache,
            "relu_mask": relu_mask,
            "drop_mask": drop_mask,
        }
        return out, cache

    def backward_modality(self, cache, dout):
        _check_cache(self, cache)
        modality = cache["modality"]
        proj = self.proj_audio if modality == "audio" else self.proj_video
        dx = dout
        if cache["drop_mask"] is not None:
            dx = dx * cache["drop_mask"]
        dx = np.where(cache["relu_mask"], dx, 0.0)
        dp, dw_shared, db_shared = self.shared_classifier.backward(cache["shared"], dx)
        dinput, dw_proj, db_proj = proj.backward(cache["proj"], dp)
        grads = {
            f"proj_{modality}.weight": dw_proj,
            f"proj_{modality}.bias": db_proj,
            "shared_classifier.weight": dw_shared,
            "shared_classifier.bias": db_shared,
        }
        return grads, dinput

    def forward_joint(self, audio, video, train=False, rng=None, masks=None):
        if audio is None or video is None:
            raise DegenerateInputError(
                "joint multi-view embedding needs both modalities; "
                "use forward_modality for a single one"
            )
        ea, cache_a = self.forward_modality("audio", audio, train, rng, masks)
        ev, cache_v = self.forward_modality("video", video, train, rng, masks)
        cache = {"kind": self.kind, "head": id(self), "audio": cache_a, "video": cache_v}
        return 0.5 * (ea + ev), cache

    def backward_joint(self, cache, dout):
        _check_cache(self, cache)
        grads_a, da = self.backward_modality(cache["audio"], 0.5 * dout)
        grads_v, dv = self.backward_modality(cache["video"], 0.5 * dout)
        grads = dict(grads_a)
        for name, g in grads_v.items():
            grads[name] = grads.get(name, 0.0) + g
        return grads, da, dv


def _check_cache(head, cache):
    if cache.get("kind") != head.kind or cache.get("head") != id(head):
        raise ConsistencyError("forward cache does not belong to this head")


# Single-vector convenience wrappers over the batched forward passes.

def mean_fuse(head, audio, video, train=False, rng=None, allow_double_null=False):
    if audio is None and video is None and not allow_double_null:
        raise DegenerateInputError("both modalities are null")
    a = None if audio is None else np.atleast_2d(np.asarray(audio, dtype=np.float64))
    v = None if video is None else np.atleast_2d(np.asarray(video, dtype=np.float64))
    out, _ = head.forward(a, v, train=train, rng=rng, n=1)
    return out[0]


def mlp_fuse(head, audio, video, train=False, rng=None):
    if audio is None and video is None:
        raise DegenerateInputError("both modalities are null")
    a = None if audio is None else np.atleast_2d(np.asarray(audio, dtype=np.float64))
    v = None if video is None else np.atleast_2d(np.asarray(video, dtype=np.float64))
    out, _ = head.forward(a, v, train=train, rng=rng, n=1)
    return out[0]


def multiview_embed(head, modality, x, train=False, rng=None):
    out, _ = head.forward_modality(
        modality, np.atleast_2d(np.asarray(x, dtype=np.float64)), train=train, rng=rng
    )
    return out[0]


def multiview_joint(head, audio, video, train=False, rng=None):
    out, _ = head.forward_joint(
        np.atleast_2d(np.asarray(audio, dtype=np.float64)),
        np.atleast_2d(np.asarray(video, dtype=np.float64)),
        train=train,
        rng=rng,
    )
    return out[0]
