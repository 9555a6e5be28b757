"""Reward, GRPO/KL-Coverage, curation and evaluation engine for reasoning IQA policies."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
