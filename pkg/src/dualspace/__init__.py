"""GAN training in an autoencoder's latent space versus directly in data space."""

from .autodiff import Tape, Tensor, backward, finite_diff_check
from .autoencoder import AEConfig, decode, encode, reconstruction_error, train_autoencoder
from .data import Dataset, HoldoutRule, gen_gaussian_ring, gen_shapes_dataset, load_idx, split_holdout, standardize
from .evaluation import evaluate_arm, holdout_recall, mmd_rbf, mode_coverage
from .gan import GanTrainConfig, discriminator_score, sample_generator, train_gan
from .pipeline import PipelineConfig, compare, default_config, flops_estimate, run_direct, run_dual_space

__version__ = "0.1.0"
