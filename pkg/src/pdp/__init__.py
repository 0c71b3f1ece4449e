"""Desk-scale laboratory for diffusion action policies.

Pipeline: train small PPO experts on task subsets, roll them out under
noisy-state/clean-action (and alternative) sampling strategies to build
behavior-cloning datasets, train a conditional DDPM action policy plus MLP
and C-VAE baselines, and evaluate success rates, tracking errors, recovery
multimodality, and placement-correctness metrics.
"""

__version__ = "0.1.0"
