"""Command-line entry point: ``lpcfgopt <command> ...``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .presets import PRUNE_THRESHOLD, RARE_THRESHOLD, language_states

log = logging.getLogger("lpcfgopt")

MANIFEST = "manifest.json"


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt_threshold(x: float) -> str:
    s = f"{x:.10f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, inputs: dict[str, str],
                   started: float, extra: dict | None = None) -> None:
    """One manifest per output directory.  Everything except ``timing``
    is a function of the inputs."""
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
           if k not in ("func", "out", "workers")}
    if "threshold" in cfg and cfg["threshold"] is not None:
        cfg["threshold"] = _fmt_threshold(cfg["threshold"])
    blob = json.dumps(cfg, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seeds": {"seed": args.seed},
        "inputs": {k: {"path": str(p), "sha256": _digest(p)} for k, p in sorted(inputs.items()) if p},
        "version": __version__,
        "workers": args.workers,
        "timing": {"seconds": round(time.time() - started, 3)},
    }
    if extra:
        manifest.update(extra)
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _train_config(args):
    from .estimation import TrainConfig
    from .treebank import parse_kv

    if not args.config:
        return TrainConfig()
    return TrainConfig.from_kv(parse_kv(Path(args.config).read_text(encoding="utf-8")))


def _read_trees(path):
    from .treebank import read_treebank

    return read_treebank(path)


def _assignment(args, trainer):
    from .optimizer import read_assignment

    if getattr(args, "f", None):
        f = read_assignment(args.f)
        missing = [a for a in trainer.symbols.labels if a not in f]
        if missing:
            raise SystemExit(f"error: {args.f} lacks nonterminals {', '.join(missing)}")
        return {a: min(f[a], trainer.max_states(a)) for a in trainer.symbols.labels}
    m = args.m if args.m is not None else (language_states(args.preset) if args.preset else 1)
    return trainer.default_assignment(m)


# -- commands ----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    from .treebank import (PREPROCESSED_MARKER, ConfigError, CorpusProfile, corpus_stats, preprocess,
                           read_morph_sidecar, write_treebank)

    started = time.time()
    text = Path(args.treebank).read_text(encoding="utf-8")
    if text.lstrip().startswith(PREPROCESSED_MARKER):
        raise ConfigError(f"{args.treebank} is already preprocessed (header {PREPROCESSED_MARKER!r})")
    profile = CorpusProfile.from_text(Path(args.profile).read_text(encoding="utf-8")) if args.profile \
        else CorpusProfile(threshold=args.rare_threshold)
    trees = _read_trees(args.treebank)
    morphs = read_morph_sidecar(args.morph, trees) if args.morph else None
    if profile.needs_morph and morphs is None:
        raise ConfigError(f"profile mode {profile.mode!r} needs a morphology sidecar (--morph)")
    out, vocab = preprocess(trees, profile, morphs)
    d = _out_dir(args.out)
    write_treebank(d / "train.trees", out, header=PREPROCESSED_MARKER)
    with open(d / "vocab.tsv", "w", encoding="utf-8") as fh:
        for w, c in sorted(vocab.counts.items(), key=lambda x: (-x[1], x[0])):
            fh.write(f"{w}\t{c}\n")
    (d / "profile.txt").write_text(profile.to_text(), encoding="utf-8")
    table = corpus_stats(out).table()
    (d / "stats.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    write_manifest(d, "preprocess", args, {"treebank": args.treebank, "profile": args.profile,
                                           "morph": args.morph}, started)
    return 0


def cmd_train(args) -> int:
    from .estimation import Trainer
    from .grammar import mle_pcfg, save_grammar
    from .optimizer import write_assignment

    started = time.time()
    trees = _read_trees(args.treebank)
    trainer = Trainer(trees, _train_config(args))
    f = _assignment(args, trainer)
    g = trainer.train(f, args.seed)
    d = _out_dir(args.out)
    save_grammar(d / "grammar.lpcfg", g)
    save_grammar(d / "pcfg.lpcfg", mle_pcfg(trees).to_lpcfg())
    write_assignment(d / "f.tsv", f)
    write_manifest(d, "train", args, {"treebank": args.treebank, "config": args.config, "f": args.f}, started,
                   {"realized_states": g.states})
    return 0


def _parse_mock(spec: str) -> dict[str, int]:
    out = {}
    for part in spec.split(","):
        k, _, v = part.partition("=")
        out[k.strip()] = int(v)
    return out


def cmd_optimize(args) -> int:
    from . import optimizer as opt

    started = time.time()
    d = _out_dir(args.out)
    if args.mock:
        targets = _parse_mock(args.mock)
        oracle = opt.separable_mock(targets)
        L = list(targets)
        f_init = {a: args.m or 1 for a in L}
        freqs = {a: 0 for a in L}
        partition = {a: "all-mock" for a in L}
        inputs = {}
    else:
        if not (args.train and args.dev):
            raise SystemExit("error: --train and --dev are required unless --mock is given")
        from .estimation import Trainer
        from .parseval import EvalParams
        from .presets import eval_profile
        from .treebank import CorpusProfile, clean_trees

        trainer = Trainer(_read_trees(args.train), _train_config(args))
        dev = _read_trees(args.dev)
        if args.profile:
            dev = clean_trees(dev, CorpusProfile.from_text(Path(args.profile).read_text(encoding="utf-8")))
        params = eval_profile(args.eval_profile) if args.eval_profile else EvalParams()
        oracle = opt.PipelineOracle(trainer, dev, params=params, seed=args.seed, threshold=args.threshold,
                                    workers=args.workers)
        freqs = trainer.frequencies()
        if args.order == "file":
            if not args.order_file:
                raise SystemExit("error: --order file needs --order-file")
            L = [x.strip() for x in Path(args.order_file).read_text(encoding="utf-8").split() if x.strip()]
        else:
            L = opt.default_order(freqs, trainer.symbols.labels)
        f_init = _assignment(args, trainer)
        partition = {a: "preterminals" if trainer.symbols.is_preterminal(a) else "interminals"
                     for a in trainer.symbols.labels}
        inputs = {"train": args.train, "dev": args.dev, "config": args.config, "f": args.f,
                  "order_file": args.order_file, "profile": args.profile}
    result = opt.search(oracle, L, f_init, args.beam, args.max_states)
    opt.write_assignment(d / "f.tsv", result.f)
    opt.write_assignment(d / "f_init.tsv", f_init)
    opt.write_trace(d / "trace.tsv", result.trace)
    rep = opt.divergence_report(f_init, result.f, partition, freqs)
    (d / "divergence.tsv").write_text(rep.text(), encoding="utf-8")
    print(f"initial F1\t{result.initial_score:.4f}\nfinal F1\t{result.score:.4f}\n"
          f"evaluations\t{result.evaluations}")
    write_manifest(d, "optimize", args, inputs, started,
                   {"result": {"f1": round(result.score, 6), "initial_f1": round(result.initial_score, 6),
                               "evaluations": result.evaluations, "fallback": result.fallback}})
    return 0


def _tagged_input(path):
    from .parser import Token
    from .treebank import read_tagged

    return [[Token(r[0], None if r[1] == "_" else r[1], r[2] if len(r) > 2 else None) for r in sent]
            for sent in read_tagged(path)]


def cmd_parse(args) -> int:
    from .grammar import load_grammar
    from .parser import parse_corpus
    from .treebank import write_treebank

    started = time.time()
    sents = _tagged_input(args.input)
    g = load_grammar(args.grammar)
    base = load_grammar(args.pcfg) if args.pcfg else None
    trees, cov = parse_corpus(g, base, sents, args.threshold, args.workers)
    d = _out_dir(args.out)
    write_treebank(d / "parsed.trees", trees)
    (d / "coverage.tsv").write_text(cov.summary(), encoding="utf-8")
    sys.stderr.write(cov.summary())
    write_manifest(d, "parse", args, {"grammar": args.grammar, "pcfg": args.pcfg, "input": args.input}, started)
    return 0


def cmd_eval(args) -> int:
    from .parseval import EvalParams, report, score_corpus
    from .presets import eval_profile

    params = eval_profile(args.eval_profile) if args.eval_profile else EvalParams()
    if args.cutoff is not None:
        params = EvalParams(params.delete_labels, params.punct_tags, args.cutoff, params.score_preterminals,
                            params.equivalences)
    score = score_corpus(_read_trees(args.gold), _read_trees(args.pred), params)
    text = report(score)
    sys.stdout.write(text)
    if args.out:
        started = time.time()
        d = _out_dir(args.out)
        (d / "report.tsv").write_text(text, encoding="utf-8")
        write_manifest(d, "eval", args, {"gold": args.gold, "pred": args.pred}, started)
    return 0


def cmd_stats(args) -> int:
    from .treebank import corpus_stats

    sys.stdout.write(corpus_stats(_read_trees(args.treebank)).table())
    return 0


def cmd_synth(args) -> int:
    from .grammar import save_grammar
    from .synth import SynthSpec, random_lpcfg, sample_trees
    from .treebank import render

    started = time.time()
    states = _parse_mock(args.states) if "=" in args.states else int(args.states)
    spec = SynthSpec(interminals=args.interminals, preterminals=args.preterminals, words=args.words,
                     states=states, separability=args.separability, max_len=args.max_len, seed=args.seed,
                     rules_per_nt=args.rules_per_nt, recursive=args.recursive)
    g = random_lpcfg(spec)
    pairs = sample_trees(g, args.n, args.seed, args.max_len)
    d = _out_dir(args.out)
    save_grammar(d / "grammar.lpcfg", g)
    with open(d / "trees.trees", "w", encoding="utf-8") as a, open(d / "annotated.trees", "w",
                                                                     encoding="utf-8") as b:
        for sk, an in pairs:
            a.write(render(sk) + "\n")
            b.write(_render_states(an) + "\n")
    write_manifest(d, "synth", args, {}, started, {"spec": spec.to_dict()})
    return 0


def _render_states(t) -> str:
    if t.is_preterminal:
        return f"({t.label}-{t.state} {t.word})"
    return f"({t.label}-{t.state} " + " ".join(_render_states(c) for c in t.children) + ")"


def cmd_presets(args) -> int:
    from .presets import snapshot

    snap = snapshot()
    if args.name:
        if args.name in snap["languages"]:
            snap = {"language": args.name, "m": snap["languages"][args.name],
                    "prune_threshold": snap["prune_threshold"]}
        elif args.name in snap["eval_profiles"]:
            snap = {"eval_profile": args.name, **snap["eval_profiles"][args.name]}
        else:
            raise SystemExit(f"error: unknown preset {args.name!r}")
    print(json.dumps(snap, indent=2, sort_keys=True))
    return 0


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel workers")
    common.add_argument("--config", help="training config file (key = value lines)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lpcfgopt", description=__doc__, parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="strip, rare-word replace and binarize a treebank")
    s.add_argument("--treebank", required=True)
    s.add_argument("--profile", help="corpus profile file")
    s.add_argument("--morph", help="morphology sidecar TSV")
    s.add_argument("--rare-threshold", type=int, default=RARE_THRESHOLD)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_preprocess)

    def add_f(s):
        s.add_argument("--f", help="state assignment file (nonterminal<TAB>m)")
        s.add_argument("--m", type=int, help="uniform latent-state count")
        s.add_argument("--preset", help="language preset giving m")

    s = sub.add_parser("train", parents=[common], help="estimate a latent-variable grammar")
    s.add_argument("--treebank", required=True, help="preprocessed training trees")
    add_f(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("optimize", parents=[common], help="search per-nonterminal state counts")
    s.add_argument("--train")
    s.add_argument("--dev", help="development gold trees")
    s.add_argument("--beam", type=int, default=None, help="beam size (default unbounded)")
    s.add_argument("--max-states", type=int, required=True)
    s.add_argument("--order", choices=("freq", "file"), default="freq")
    s.add_argument("--order-file")
    s.add_argument("--profile", help="corpus profile applied to dev trees")
    s.add_argument("--eval-profile", choices=("collins", "spmrl", "plain"))
    s.add_argument("--threshold", type=float, default=PRUNE_THRESHOLD)
    add_f(s)
    s.add_argument("--mock", help=argparse.SUPPRESS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("parse", parents=[common], help="parse tagged sentences")
    s.add_argument("--grammar", required=True)
    s.add_argument("--pcfg", help="latentless grammar used for pruning")
    s.add_argument("--input", required=True, help="word<TAB>tag[<TAB>morph] rows, blank line between sentences")
    s.add_argument("--threshold", type=float, default=PRUNE_THRESHOLD)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("eval", parents=[common], help="PARSEVAL scores")
    s.add_argument("--gold", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--eval-profile", choices=("collins", "spmrl", "plain"))
    s.add_argument("--cutoff", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", parents=[common], help="corpus statistics")
    s.add_argument("--treebank", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", parents=[common], help="random grammar and sampled treebank")
    s.add_argument("--interminals", type=int, default=3)
    s.add_argument("--preterminals", type=int, default=3)
    s.add_argument("--words", type=int, default=10)
    s.add_argument("--states", default="2", help="uniform count or A=2,B=3,...")
    s.add_argument("--separability", type=float, default=1.0)
    s.add_argument("--max-len", type=int, default=None)
    s.add_argument("--rules-per-nt", type=int, default=3)
    s.add_argument("--recursive", action="store_true")
    s.add_argument("-n", type=int, default=1000, help="number of sampled trees")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("presets", parents=[common], help="show published defaults")
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
