"""Geometry-aware graph transformer for whole-slide-image bag classification.

Pipeline: patch-embedding bags -> k-NN slide graph -> multi-head geometry
attention -> topology-adaptive graph convolution -> gated attention pooling
-> classifier, with a from-scratch reverse-mode autodiff engine underneath
and a training/evaluation/interpretability harness on top.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend
