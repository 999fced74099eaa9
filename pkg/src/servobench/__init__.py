"""Desk-scale visual-servoing workbench.

Synthetic connector scenes, a Siamese relative-pose regression network
trained from rendered image pairs, and one-shot/iterative servo loops
with an insertion-tolerance predicate.
"""

from . import geometry, sampler, scene, servo, tensornet

__all__ = ["geometry", "sampler", "scene", "servo", "tensornet"]
__version__ = "0.1.0"
