"""
Splitting a feature map into camera-specific and camera-agnostic parts
======================================================================

A spatial gate times a channel gate gives a mask in (0, 1). The masked part
feeds a camera classifier; the remainder becomes the retrieval embedding.
"""
import math

import numpy as np

from camsep import css_attention as css
from camsep.gradcheck import check_agnostic, check_sep

rng = np.random.default_rng(0)
C, n_cams = 16, 4
params = css.init_params(C, n_cams, r=4, rng=rng)
buffers = css.init_buffers(C)
F = rng.standard_normal((6, 8, 4, C))

mask = css.attention_mask(F, params)
F_sp, F_ag = css.split_branches(F, mask)
print("mask range (%.3f, %.3f)" % (mask.min(), mask.max()))
print("F_sp + F_ag - F, max abs:", np.abs(F_sp + F_ag - F).max())

out = css.css_forward(F, params, buffers, "train")
print("f_ag norms", np.round(np.linalg.norm(out.f_agnostic, axis=1), 6))

# an untrained classifier with zero weights is uniform over cameras
zeros = dict(params, **{"sp.fc_w": np.zeros((C, n_cams)), "sp.fc_b": np.zeros(n_cams)})
loss, _, _ = css.sep_loss(out.f_specific, np.arange(6) % n_cams, zeros)
print("camera loss %.6f  ln(n_cams) %.6f" % (loss, math.log(n_cams)))

# hand-written backward against central differences
print("sep path rel err %.1e" % check_sep(np.random.default_rng(1)))
print("agnostic path rel err %.1e" % check_agnostic(np.random.default_rng(2)))
