"""Desk-scale asynchronous SGD with delayed updates, local optimizers and momentum cooldown."""

__version__ = "0.1.0"
