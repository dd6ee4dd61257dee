"""Central finite-difference checks for every hand-written gradient path."""
from __future__ import annotations

import numpy as np

from . import css_attention as css
from .losses import (LossWeights, base_loss, batch_camera_centers, batch_centers_backward,
                     cacc_loss, casc_loss, memory_camera_centers)

STEP = 1e-4
TOLERANCE = 1e-4
# central differences straddle the ReLU kink when a pre-activation is within a
# step of zero; such instances are redrawn rather than scored
KINK_MARGIN = 1e-2


def relative_error(analytic, numeric, floor=1e-10) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(fn, x, step=STEP):
    """Central differences of scalar ``fn()`` w.r.t. array ``x`` (edited in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        hi = fn()
        flat[j] = orig - step
        lo = fn()
        flat[j] = orig
        gflat[j] = (hi - lo) / (2 * step)
    return g


# -- random instances ---------------------------------------------------------

def random_css_instance(rng, B=4, H=4, W=3, C=8, r=2, n_cams=3):
    while True:
        params = css.init_params(C, n_cams, r, rng)
        for k in params:
            params[k] = params[k] + 0.5 * rng.standard_normal(params[k].shape)
        params["attn.spatial_w"] = rng.standard_normal(1)
        F = rng.standard_normal((B, H, W, C))
        _, parts = css._attention_parts(F, params)
        if np.abs(parts["hidden_pre"]).min() > KINK_MARGIN:
            break
    buffers = css.init_buffers(C)
    cams = rng.integers(0, n_cams, B)
    return F, params, buffers, cams


def random_loss_instance(rng, B=8, d=5, n_classes=3, n_cams=2, n_mem=24):
    f = rng.standard_normal((B, d))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    labels = rng.integers(0, n_classes, B)
    cams = rng.integers(0, n_cams, B)
    mem = rng.standard_normal((n_mem, d))
    mem /= np.linalg.norm(mem, axis=1, keepdims=True)
    mem_labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, n_mem - n_classes)])
    mem_cams = rng.integers(0, n_cams, n_mem)
    weights = LossWeights(tau_base=float(rng.uniform(0.2, 1.0)),
                          tau_cacc=float(rng.uniform(0.2, 1.0)),
                          n_negatives=int(rng.integers(1, 4)))
    return f, labels, cams, memory_camera_centers(mem, mem_labels, mem_cams), weights


# -- individual paths -----------------------------------------------------------

def check_sep(rng, perturb=False):
    F, params, buffers, cams = random_css_instance(rng)

    def loss():
        out = css.css_forward(F, params, buffers, "train")
        return css.sep_loss(out.f_specific, cams, params)[0]

    out = css.css_forward(F, params, buffers, "train")
    _, fc_grads, d_sp = css.sep_loss(out.f_specific, cams, params)
    grads = css.css_backward(out, params, None, d_sp)
    grads.update(fc_grads)
    err = 0.0
    for name in css.ATTN_KEYS + css.SP_KEYS:
        g = grads[name] * (1.01 if perturb else 1.0)
        err = max(err, relative_error(g, numeric_grad(loss, params[name])))
    return err


def check_agnostic(rng, perturb=False, use_css=True):
    F, params, buffers, _ = random_css_instance(rng)
    B, C = F.shape[0], F.shape[-1]
    R = rng.standard_normal((B, C))

    def loss():
        return float((css.css_forward(F, params, buffers, "train", use_css).f_agnostic * R).sum())

    out = css.css_forward(F, params, buffers, "train", use_css)
    grads = css.css_backward(out, params, R, None, return_input_grad=True)
    names = (css.ATTN_KEYS + css.AG_KEYS) if use_css else css.AG_KEYS
    err = 0.0
    for name in names:
        g = grads[name] * (1.01 if perturb else 1.0)
        err = max(err, relative_error(g, numeric_grad(loss, params[name])))
    err = max(err, relative_error(grads["F"], numeric_grad(loss, F)))
    return err


def check_base(rng, perturb=False):
    f, labels, _, _, w = random_loss_instance(rng)
    centroids = rng.standard_normal((4, f.shape[1]))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = labels % 4
    _, g = base_loss(f, labels, centroids, w.tau_base)
    num = numeric_grad(lambda: base_loss(f, labels, centroids, w.tau_base)[0], f)
    return relative_error(g * (1.01 if perturb else 1.0), num)


def check_cacc(rng, perturb=False):
    f, labels, cams, mem, w = random_loss_instance(rng)
    _, g = cacc_loss(f, labels, cams, mem, w)
    num = numeric_grad(lambda: cacc_loss(f, labels, cams, mem, w)[0], f)
    return relative_error(g * (1.01 if perturb else 1.0), num)


def check_casc(rng, perturb=False):
    f, labels, cams, mem, w = random_loss_instance(rng)
    _, g = casc_loss(f, labels, cams, mem, w)
    num = numeric_grad(lambda: casc_loss(f, labels, cams, mem, w)[0], f)
    return relative_error(g * (1.01 if perturb else 1.0), num)


def check_batch_centers(rng, perturb=False):
    f, labels, cams, _, _ = random_loss_instance(rng)
    centers = batch_camera_centers(f, labels, cams)
    R = rng.standard_normal(centers.vectors.shape)
    g = batch_centers_backward(centers, R, f.shape[0])
    num = numeric_grad(lambda: float((batch_camera_centers(f, labels, cams).vectors * R).sum()), f)
    return relative_error(g * (1.01 if perturb else 1.0), num)


PATHS = {
    "css.sep": check_sep,
    "css.agnostic": check_agnostic,
    "css.baseline": lambda rng, perturb=False: check_agnostic(rng, perturb, use_css=False),
    "loss.base": check_base,
    "loss.cacc": check_cacc,
    "loss.casc": check_casc,
    "loss.batch_centers": check_batch_centers,
}


def run_all(seed: int = 0, n_instances: int = 100, perturb: str | None = None) -> dict[str, float]:
    """Max relative error per gradient path over ``n_instances`` seeded instances."""
    report = {}
    for i, (name, check) in enumerate(PATHS.items()):
        rng = np.random.default_rng([seed, i])
        report[name] = max(check(rng, perturb=(name == perturb)) for _ in range(n_instances))
    return report
