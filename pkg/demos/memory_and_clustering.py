"""
Memory bank, k-reciprocal Jaccard distance and DBSCAN
=====================================================

Pseudo-labels come from clustering the memory bank once per epoch.
"""
import numpy as np

from camsep.clustering import ClusterConfig, dbscan, k_reciprocal_jaccard, pairwise_euclidean, relabel_epoch
from camsep.eval_metrics import adjusted_rand
from camsep.memory_bank import MemoryBank

# momentum update: blend, then project back to the unit sphere
bank = MemoryBank(np.array([[1.0, 0.0]]), momentum=0.2)
bank.update_slot(0, np.array([0.0, 1.0]))
print("blend", bank.last_blend, "stored", np.round(bank[0], 4))

# three planted groups on the unit sphere
rng = np.random.default_rng(0)
centers = rng.standard_normal((3, 8))
X = np.repeat(centers, 10, axis=0) + 0.15 * rng.standard_normal((30, 8))
X /= np.linalg.norm(X, axis=1, keepdims=True)
truth = np.repeat(np.arange(3), 10)

D = pairwise_euclidean(X)
J = k_reciprocal_jaccard(D, k1=10, k2=3)
print("Jaccard within group %.3f, across %.3f" % (J[truth[:, None] == truth].mean(),
                                                  J[truth[:, None] != truth].mean()))

lab = dbscan(J, eps=0.5, min_pts=4)
print("clusters", lab.n_clusters, "outliers", int((lab.labels < 0).sum()))
print("ARI vs truth %.3f" % adjusted_rand(lab.labels, truth))

# the same in one call, as the trainer does it
lab = relabel_epoch(X, ClusterConfig(eps=0.5, min_pts=4, k1=10, k2=3))
print("relabel_epoch labels", lab.labels.tolist())
