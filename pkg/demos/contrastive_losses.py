"""
Camera-aware contrastive losses
===============================

The center-anchored loss uses per-(class, camera) batch centers as anchors;
the sample-anchored variant uses each sample. Both pull toward every memory
center of the same class and push from the hardest other-class centers.
"""
import math

import numpy as np

from camsep.losses import LossWeights, cacc_loss, casc_loss, memory_camera_centers, total_loss

# symmetric case: the anchor is equally close to positive and negative
p = np.array([[1.0, 1.0, 0.0]]) / math.sqrt(2)
g = np.array([1.0, 0.0, 0.3]) / math.sqrt(1.09)
n = np.array([0.0, 1.0, 0.3]) / math.sqrt(1.09)
mem = memory_camera_centers(np.array([g, n]), np.array([0, 1]), np.array([0, 0]))
w = LossWeights(tau_cacc=0.07, n_negatives=1)
print("symmetric loss %.9f, ln 2 = %.9f" % (cacc_loss(p, [0], [0], mem, w)[0], math.log(2)))

# saturated case: anchor on the positive, orthogonal to the negative
mem = memory_camera_centers(np.eye(2), np.array([0, 1]), np.array([0, 0]))
print("saturated loss %.3e" % cacc_loss(np.array([[1.0, 0.0]]), [0], [0], mem, w)[0])

# a noisy batch: centers average out noise, samples do not
rng = np.random.default_rng(0)
proto = rng.standard_normal((3, 8))
labels = np.repeat(np.arange(3), 4)
cams = np.tile([0, 1], 6)
f = proto[labels] + 0.8 * rng.standard_normal((12, 8))
f /= np.linalg.norm(f, axis=1, keepdims=True)
mem_vecs = proto[np.repeat(np.arange(3), 2)] / np.linalg.norm(proto, axis=1).repeat(2)[:, None]
mem = memory_camera_centers(mem_vecs, np.repeat(np.arange(3), 2), np.tile([0, 1], 3))
w = LossWeights(tau_cacc=0.07, n_negatives=2)
print("center-anchored %.4f  sample-anchored %.4f" % (cacc_loss(f, labels, cams, mem, w)[0],
                                                      casc_loss(f, labels, cams, mem, w)[0]))
print("total(base=1, sep=2, cacc=3) =", total_loss(1.0, 2.0, 3.0))
