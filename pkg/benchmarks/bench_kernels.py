"""Compare the compiled and pure-Python chart kernels.

    python benchmarks/bench_kernels.py [--sentences 30] [--length 12] [--states 4]
"""
import argparse
import time

import numpy as np

from lpcfgopt.parser import BACKENDS, all_candidates, decode_max_rule, inside_outside
from lpcfgopt.synth import SynthSpec, random_lpcfg, sample_trees


def run(g, sents, backend):
    t0 = time.perf_counter()
    out = []
    for w in sents:
        ch = inside_outside(g, None, candidates=all_candidates(g, w), backend=backend)
        out.append((ch.logZ, str(decode_max_rule(ch, backend)) if ch.parsed else None))
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sentences", type=int, default=30)
    ap.add_argument("--length", type=int, default=12)
    ap.add_argument("--states", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = SynthSpec(interminals=5, preterminals=5, words=20, states=args.states, separability=0.9,
                     max_len=args.length, seed=args.seed, rules_per_nt=6, recursive=True, branching=0.95)
    g = random_lpcfg(spec)
    pairs = sample_trees(g, 20 * args.sentences, seed=args.seed, max_len=args.length)
    pairs.sort(key=lambda p: -len(p[0].words()))
    sents = [p[0].words() for p in pairs[:args.sentences]]
    print(f"{len(sents)} sentences, mean length {np.mean([len(s) for s in sents]):.1f}, "
          f"states per nonterminal {args.states}")

    results = {}
    for name in sorted(BACKENDS):
        secs, out = run(g, sents, name)
        results[name] = (secs, out)
        print(f"{name:8s} {secs:8.3f} s  ({1000 * secs / len(sents):.1f} ms/sentence)")
    if "cython" in results:
        (tp, op), (tc, oc) = results["python"], results["cython"]
        agree = all(np.isclose(a[0], b[0], rtol=1e-10, atol=0) and a[1] == b[1] for a, b in zip(op, oc))
        print(f"speedup  {tp / tc:8.1f}x   outputs agree: {agree}")
    else:
        print("compiled backend not built; only the Python kernels ran")


if __name__ == "__main__":
    main()
