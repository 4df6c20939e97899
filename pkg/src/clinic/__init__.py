"""Learning representations disentangled from a sensitive attribute.

Subpackages cover a minimal reverse-mode autodiff engine, synthetic fairness
data, MLP encoder/head/probe models, the contrastive and adversarial
regularizers, exact discrete information-theory oracles, the training loop,
probe-based evaluation, and sweep orchestration.
"""

__version__ = "0.1.0"
