"""Published configuration defaults as named presets."""
from __future__ import annotations

from .parseval import EvalParams

PRUNE_THRESHOLD = 0.00005
RARE_THRESHOLD = 20
COARSE_STEP = 5
REFINE_OFFSETS = tuple(range(-4, 5))

# uniform latent-state counts per language
LANGUAGE_STATES = {
    "basque": 4,
    "french": 24,
    "german-n": 8,
    "german-t": 16,
    "hebrew": 4,
    "hungarian": 16,
    "korean": 16,
    "polish": 4,
    "swedish": 4,
}

# punctuation tags of the English and SPMRL conventions; users override per corpus
_PTB_PUNCT = frozenset({",", ":", "``", "''", ".", "-NONE-", "#", "$", "-LRB-", "-RRB-"})

EVAL_PROFILES = {
    "collins": EvalParams(delete_labels=frozenset({"TOP", "ROOT", "VROOT", "-NONE-"}), punct_tags=_PTB_PUNCT,
                          equivalences={"ADVP": "PRT"}),
    "spmrl": EvalParams(delete_labels=frozenset({"TOP", "ROOT", "VROOT", "-NONE-"})),
    "plain": EvalParams(),
}


def eval_profile(name: str) -> EvalParams:
    try:
        return EVAL_PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown eval profile {name!r}; choose from {sorted(EVAL_PROFILES)}") from None


def language_states(name: str) -> int:
    try:
        return LANGUAGE_STATES[name]
    except KeyError:
        raise KeyError(f"unknown language preset {name!r}; choose from {sorted(LANGUAGE_STATES)}") from None


def snapshot() -> dict:
    """Plain-data view used by the ``presets`` command."""
    return {
        "prune_threshold": f"{PRUNE_THRESHOLD:.5f}",
        "rare_threshold": RARE_THRESHOLD,
        "coarse_grid": "1, 5, 10, ..., m",
        "refine_offsets": list(REFINE_OFFSETS),
        "languages": dict(LANGUAGE_STATES),
        "eval_profiles": {
            k: {"delete_labels": sorted(v.delete_labels), "punct_tags": sorted(v.punct_tags),
                "cutoff": v.cutoff, "equivalences": dict(v.equivalences)}
            for k, v in EVAL_PROFILES.items()
        },
    }
