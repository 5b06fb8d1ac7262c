"""Desk-scale OCT B-scan classification pipeline.

Subpackages cover the whole chain: synthetic phantom generation, EMR-style
cohort selection, image preprocessing, a small CNN trained from scratch with
SGD, three-level ROC evaluation, and occlusion saliency maps.  Everything is
seeded and bit-reproducible; see the ``octpipe`` CLI for the stage-by-stage
workflow.
"""

__version__ = "0.1.0"
