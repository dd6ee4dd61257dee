"""Two-branch camera style separation with hand-written backward pass.

A factored attention mask ``sigmoid(spatial) * sigmoid(channel)`` splits a
feature map into a camera-specific part ``mask * F`` and its complement
``(1 - mask) * F``. Each part is average-pooled and standardized; the
camera-specific vector feeds a linear camera classifier, the
camera-agnostic one is L2-normalized and used for matching.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer,
checkpoint writer and gradient checker can treat them uniformly. Running
batch-norm statistics are kept apart in a ``buffers`` dict because they are
not trained.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

ATTN_KEYS = (
    "attn.reduce_w", "attn.reduce_b", "attn.expand_w", "attn.expand_b",
    "attn.spatial_w", "attn.spatial_b",
)
SP_KEYS = ("sp.bn_scale", "sp.bn_shift", "sp.fc_w", "sp.fc_b")
AG_KEYS = ("ag.bn_scale", "ag.bn_shift")
PARAM_KEYS = ATTN_KEYS + SP_KEYS + AG_KEYS


def sigmoid(x):
    x = np.asarray(x)
    if x.ndim == 0:
        return sigmoid(x[None])[0]
    # split by sign so large |x| neither overflows nor loses the tail
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(C: int, n_cams: int, r: int = 4, rng=None) -> dict[str, np.ndarray]:
    if r < 1 or C % r:
        raise ConfigError(f"reduction ratio r={r} must divide C={C}")
    rng = np.random.default_rng(rng)
    hidden = C // r
    return {
        "attn.reduce_w": rng.standard_normal((C, hidden)) / np.sqrt(C),
        "attn.reduce_b": np.zeros(hidden),
        "attn.expand_w": rng.standard_normal((hidden, C)) / np.sqrt(hidden),
        "attn.expand_b": np.zeros(C),
        "attn.spatial_w": 0.1 * rng.standard_normal(1),
        "attn.spatial_b": np.zeros(1),
        "sp.bn_scale": np.ones(C),
        "sp.bn_shift": np.zeros(C),
        "sp.fc_w": 0.01 * rng.standard_normal((C, n_cams)),
        "sp.fc_b": np.zeros(n_cams),
        "ag.bn_scale": np.ones(C),
        "ag.bn_shift": np.zeros(C),
    }


def init_buffers(C: int) -> dict[str, np.ndarray]:
    return {
        "sp.running_mean": np.zeros(C),
        "sp.running_var": np.ones(C),
        "ag.running_mean": np.zeros(C),
        "ag.running_var": np.ones(C),
    }


def _as_batch(F):
    F = np.asarray(F)
    if F.ndim == 3:
        return F[None], True
    if F.ndim != 4:
        raise ShapeError(f"feature map must be HxWxC or BxHxWxC, got shape {F.shape}")
    return F, False


def _check_attention_shapes(F, params):
    C = F.shape[-1]
    wr, we = params["attn.reduce_w"], params["attn.expand_w"]
    if wr.shape[0] != C or we.shape[1] != C or wr.shape[1] != we.shape[0]:
        raise ShapeError(
            f"attention weights {wr.shape}/{we.shape} do not match C={C}"
        )


def _attention_parts(F, params):
    """Forward of the mask, keeping every intermediate for backward."""
    _check_attention_shapes(F, params)
    pooled = F.mean(axis=(1, 2))                                   # (B, C)
    hidden_pre = pooled @ params["attn.reduce_w"] + params["attn.reduce_b"]
    hidden = np.maximum(hidden_pre, 0.0)
    ch_logit = hidden @ params["attn.expand_w"] + params["attn.expand_b"]
    ch_gate = sigmoid(ch_logit)                                    # (B, C)
    pos_mean = F.mean(axis=3)                                      # (B, H, W)
    sp_logit = params["attn.spatial_w"][0] * pos_mean + params["attn.spatial_b"][0]
    sp_gate = sigmoid(sp_logit)                                    # (B, H, W)
    mask = sp_gate[..., None] * ch_gate[:, None, None, :]
    parts = dict(pooled=pooled, hidden_pre=hidden_pre, hidden=hidden,
                 ch_gate=ch_gate, pos_mean=pos_mean, sp_gate=sp_gate)
    return mask, parts


def attention_mask(F, params) -> np.ndarray:
    """Mask in (0, 1) with the same shape as ``F`` (single map or batch)."""
    Fb, single = _as_batch(F)
    mask, _ = _attention_parts(Fb, params)
    return mask[0] if single else mask


def split_branches(F, mask):
    """Return ``(mask * F, (1 - mask) * F)``; dtype follows ``F``."""
    F = np.asarray(F)
    mask = np.asarray(mask)
    if F.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} != feature shape {F.shape}")
    mask = mask.astype(F.dtype, copy=False)
    return mask * F, (1 - mask) * F


# -- pooling + batch standardization ---------------------------------------

def _standardize(v, scale, shift, mode, running_mean, running_var):
    if mode == "train":
        if v.shape[0] < 2:
            raise ValueError("train-mode standardization needs a batch of >= 2 samples")
        mean = v.mean(axis=0)
        var = v.var(axis=0)
        new_stats = (
            BN_MOMENTUM * running_mean + (1 - BN_MOMENTUM) * mean,
            BN_MOMENTUM * running_var + (1 - BN_MOMENTUM) * var,
        )
    elif mode == "eval":
        mean, var = running_mean, running_var
        new_stats = None
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    std = np.sqrt(var + BN_EPS)
    xhat = (v - mean) / std
    return scale * xhat + shift, (xhat, std), new_stats


def _standardize_backward(dy, cache, scale, mode):
    xhat, std = cache
    d_scale = (dy * xhat).sum(axis=0)
    d_shift = dy.sum(axis=0)
    dxhat = dy * scale
    if mode == "train":
        dv = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / std
    else:
        dv = dxhat / std
    return dv, d_scale, d_shift


def _l2_normalize(y):
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    return y / norm, norm


def pool_and_normalize(F_branch, scale, shift, mode="train", running_mean=None,
                       running_var=None, l2=True):
    """GAP over H x W, standardize, optionally L2-normalize.

    Returns ``(vectors, new_running_stats)``; the stats tuple is ``None`` in
    eval mode. ``F_branch`` must be a batch ``(B, H, W, C)``.
    """
    C = F_branch.shape[-1]
    if running_mean is None:
        running_mean = np.zeros(C)
    if running_var is None:
        running_var = np.ones(C)
    v = F_branch.mean(axis=(1, 2))
    y, _, new_stats = _standardize(v, scale, shift, mode, running_mean, running_var)
    if l2:
        y, _ = _l2_normalize(y)
    return y, new_stats


# -- full module -------------------------------------------------------------

@dataclass
class BranchOutput:
    mask: np.ndarray | None
    f_specific: np.ndarray | None
    f_agnostic: np.ndarray
    new_buffers: dict = field(default_factory=dict)
    cache: dict | None = field(default=None, repr=False)


def css_forward(F, params, buffers, mode="train", use_css=True) -> BranchOutput:
    """Run the module on a batch ``F`` of shape ``(B, H, W, C)``.

    With ``use_css=False`` the mask is skipped and ``f_agnostic`` is the
    standardized, normalized plain GAP of ``F`` (the ablation baseline).
    ``new_buffers`` holds the updated running statistics (train mode only);
    the caller decides when to commit them.
    """
    F, _ = _as_batch(F)
    F = F.astype(np.float64, copy=False)
    cache = dict(F=F, mode=mode, use_css=use_css)
    new_buffers = {}

    if use_css:
        mask, parts = _attention_parts(F, params)
        cache.update(parts, mask=mask)
        F_sp, F_ag = split_branches(F, mask)
        v_sp = F_sp.mean(axis=(1, 2))
        f_sp, cache["sp_bn"], stats = _standardize(
            v_sp, params["sp.bn_scale"], params["sp.bn_shift"], mode,
            buffers["sp.running_mean"], buffers["sp.running_var"])
        if stats is not None:
            new_buffers["sp.running_mean"], new_buffers["sp.running_var"] = stats
    else:
        mask, f_sp, F_ag = None, None, F

    v_ag = F_ag.mean(axis=(1, 2))
    y_ag, cache["ag_bn"], stats = _standardize(
        v_ag, params["ag.bn_scale"], params["ag.bn_shift"], mode,
        buffers["ag.running_mean"], buffers["ag.running_var"])
    if stats is not None:
        new_buffers["ag.running_mean"], new_buffers["ag.running_var"] = stats
    f_ag, cache["ag_norm"] = _l2_normalize(y_ag)
    cache["f_ag"] = f_ag
    return BranchOutput(mask, f_sp, f_ag, new_buffers, cache)


def sep_loss(f_sp, cam_labels, params):
    """Mean camera cross-entropy of the linear classifier on ``f_sp``.

    Returns ``(loss, grads, d_f_sp)`` where ``grads`` holds the classifier
    weight and bias gradients.
    """
    f_sp = np.asarray(f_sp, dtype=np.float64)
    cam_labels = np.asarray(cam_labels)
    B = f_sp.shape[0]
    logits = f_sp @ params["sp.fc_w"] + params["sp.fc_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(logits).sum(axis=1))
    loss = float(np.mean(log_z - logits[np.arange(B), cam_labels]))

    d_logits = np.exp(logits - log_z[:, None])
    d_logits[np.arange(B), cam_labels] -= 1.0
    d_logits /= B
    grads = {
        "sp.fc_w": f_sp.T @ d_logits,
        "sp.fc_b": d_logits.sum(axis=0),
    }
    return loss, grads, d_logits @ params["sp.fc_w"].T


def zero_grads(params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def css_backward(out: BranchOutput, params, d_f_agnostic=None, d_f_specific=None,
                 return_input_grad=False):
    """Chain rule from embedding gradients back to every module parameter.

    ``d_f_agnostic`` / ``d_f_specific`` are upstream gradients w.r.t. the
    outputs of :func:`css_forward` (either may be ``None``). Returns a dict
    with an entry for every parameter (zeros where unused) and, when
    requested, the gradient w.r.t. the input under key ``"F"``.
    """
    c = out.cache
    if c is None:
        raise RuntimeError("css_backward called without a forward cache")
    F, mode = c["F"], c["mode"]
    B, H, W, C = F.shape
    grads = zero_grads(params)
    dF = np.zeros_like(F) if return_input_grad else None

    if d_f_agnostic is None:
        d_f_agnostic = np.zeros((B, C))
    f_ag, norm = c["f_ag"], c["ag_norm"]
    d_y = (d_f_agnostic - f_ag * (f_ag * d_f_agnostic).sum(axis=1, keepdims=True)) / norm
    dv_ag, grads["ag.bn_scale"], grads["ag.bn_shift"] = _standardize_backward(
        d_y, c["ag_bn"], params["ag.bn_scale"], mode)
    dF_ag = np.broadcast_to(dv_ag[:, None, None, :] / (H * W), F.shape)

    if not c["use_css"]:
        if return_input_grad:
            dF += dF_ag
            grads["F"] = dF
        return grads

    if d_f_specific is None:
        d_f_specific = np.zeros((B, C))
    dv_sp, grads["sp.bn_scale"], grads["sp.bn_shift"] = _standardize_backward(
        d_f_specific, c["sp_bn"], params["sp.bn_scale"], mode)
    dF_sp = np.broadcast_to(dv_sp[:, None, None, :] / (H * W), F.shape)

    mask = c["mask"]
    d_mask = (dF_sp - dF_ag) * F
    sp_gate, ch_gate = c["sp_gate"], c["ch_gate"]

    d_sp_gate = (d_mask * ch_gate[:, None, None, :]).sum(axis=3)
    d_sp_logit = d_sp_gate * sp_gate * (1 - sp_gate)
    grads["attn.spatial_w"] = np.array([(d_sp_logit * c["pos_mean"]).sum()])
    grads["attn.spatial_b"] = np.array([d_sp_logit.sum()])

    d_ch_gate = (d_mask * sp_gate[..., None]).sum(axis=(1, 2))
    d_ch_logit = d_ch_gate * ch_gate * (1 - ch_gate)
    grads["attn.expand_w"] = c["hidden"].T @ d_ch_logit
    grads["attn.expand_b"] = d_ch_logit.sum(axis=0)
    d_hidden = (d_ch_logit @ params["attn.expand_w"].T) * (c["hidden_pre"] > 0)
    grads["attn.reduce_w"] = c["pooled"].T @ d_hidden
    grads["attn.reduce_b"] = d_hidden.sum(axis=0)

    if return_input_grad:
        dF += dF_sp * mask + dF_ag * (1 - mask)
        dF += (d_sp_logit * params["attn.spatial_w"][0])[..., None] / C
        dF += (d_hidden @ params["attn.reduce_w"].T)[:, None, None, :] / (H * W)
        grads["F"] = dF
    return grads
