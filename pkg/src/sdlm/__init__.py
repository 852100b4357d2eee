"""Staged soft-masking diffusion language model.

A text diffusion model whose forward process corrupts tokens in order of
linguistic importance (tf-idf and entropy), trained with a step-weighted
cross-entropy objective, with classifier-guided controllable generation
and minimum-Bayes-risk decoding.
"""

__version__ = "0.1.0"
