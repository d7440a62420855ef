"""Latent-variable CKY parser.

The inside, outside and max-rule kernels come from the compiled
``_ckernels`` extension when available and from ``_pykernels`` otherwise;
``BACKEND`` names the active one.
"""
from ._backend import BACKEND, BACKENDS
from .chart import (DEFAULT_THRESHOLD, Chart, ChartGrammar, PruneMask, TagCandidates, TaggedSentence, Token,
                    all_candidates, decode_max_rule, inside_outside, prune_mask, relax_tags, tagged_from_tree)
from .corpus import CoverageReport, fallback_tree, parse_corpus, parse_sentence

__all__ = [
    "BACKEND", "BACKENDS", "DEFAULT_THRESHOLD", "Chart", "ChartGrammar", "CoverageReport", "PruneMask",
    "TagCandidates", "TaggedSentence", "Token", "all_candidates", "decode_max_rule", "fallback_tree",
    "inside_outside", "parse_corpus", "parse_sentence", "prune_mask", "relax_tags", "tagged_from_tree",
]
