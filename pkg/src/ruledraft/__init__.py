"""Desk-scale neuro-symbolic report drafting engine.

Feature matrices go in; probabilistic concepts, soft-logic rule activations,
templated clause drafts with provenance, and review cases come out. Training,
active-learning selection, a multi-agent coordination bus, and an HTTP review
service live in the submodules.
"""

__version__ = "0.1.0"

from .rng import RngStream

__all__ = ["RngStream", "__version__"]
