"""Camera-aware style separation and contrastive learning on synthetic feature maps."""
from .clustering import ClusterConfig, PseudoLabeling, dbscan, k_reciprocal_jaccard, relabel_epoch
from .css_attention import attention_mask, css_backward, css_forward, sep_loss, split_branches
from .eval_metrics import adjusted_rand, make_split, map_cmc, rank_gallery
from .losses import LossWeights, base_loss, cacc_loss, casc_loss, total_loss
from .memory_bank import MemoryBank, init_bank
from .synth_data import Dataset, SynthConfig, generate_dataset, load_dataset, save_dataset
from .trainer import TrainConfig, Trainer, adam_step, fit, sample_batches

__version__ = "0.1.0"
