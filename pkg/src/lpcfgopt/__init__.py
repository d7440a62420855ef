"""Latent-variable PCFG toolkit: spectral-clustering estimation, CKY parsing,
PARSEVAL scoring and a beam search over per-nonterminal latent-state counts."""

__version__ = "0.1.0"
