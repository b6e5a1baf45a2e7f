"""Multi-class corrosion segmentation toolkit.

A small encoder-decoder segmentation network built from explicit numpy layer
ops, four class-imbalance loss functions, a corrosion-focused metric suite,
a deterministic synthetic scene generator, and a training loop with
Dice-based early stopping.
"""

__version__ = "0.1.0"
