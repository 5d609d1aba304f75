"""Command-line entry point: ``kbvec <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime failure.
Diagnostics go to stderr prefixed with ``error:``; results go to stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from kbvec import evaluation, nn, synth
from kbvec.errors import (
    ConfigError,
    ConsistencyError,
    FormatError,
    TrainingDivergedError,
    UndefinedCorrelationError,
    UndefinedSimilarityError,
)
from kbvec.hierarchy import read_hierarchy
from kbvec.trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from kbvec.vocab import load_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# config-file / flag aliases onto TrainConfig fields
_ALIASES = {"lr": "learning_rate", "batch": "batch_size", "clip": "grad_clip", "min-count": "min_count"}
_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name, text):
    default = _FIELDS[name].default
    if name == "grad_clip":
        return float(text)
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    return type(default)(text)


def load_config(path) -> dict:
    """Parse a flat ``key = value`` file into TrainConfig overrides."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = (part.strip() for part in line.partition("="))
            name = _ALIASES.get(key, key.replace("-", "_"))
            if name not in _FIELDS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[name] = _coerce(name, raw)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: cannot parse value {raw!r} for key {key!r}") from None
    return values


def resolve_config(path=None, overrides=None) -> TrainConfig:
    """Built-in defaults < config file < explicit flags."""
    values = load_config(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return TrainConfig(**values)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _train_flags(ns) -> dict:
    return {
        "mode": ns.mode,
        "dim": ns.dim,
        "learning_rate": ns.lr,
        "batch_size": ns.batch,
        "epochs": ns.epochs,
        "window": ns.window,
        "min_count": ns.min_count,
        "seed": ns.seed,
        "threads": ns.threads,
        "optimizer": ns.optimizer,
        "grad_clip": ns.clip,
    }


def cmd_train(ns, out, err):
    config = resolve_config(ns.config, _train_flags(ns))
    print("config: " + " ".join(f"{k}={v}" for k, v in config.as_dict().items()), file=err)
    if config.mode != "cbow" and not ns.kb:
        raise UsageError(f"--kb is required for mode {config.mode}")
    documents = load_corpus(ns.corpus)
    hierarchy = read_hierarchy(ns.kb) if ns.kb and config.mode != "cbow" else None
    resume = load_checkpoint(ns.resume) if ns.resume else None
    params, report = train(
        documents,
        hierarchy,
        config,
        resume=resume,
        on_epoch=lambda e, loss: print(f"epoch {e} loss {loss:.10f}", file=err, flush=True),
    )
    save_checkpoint(ns.out, params, report.vocabulary, report.optimizer_state)
    final = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    print(f"final_loss={final!r} examples={report.n_examples} vocab={len(report.vocabulary)}", file=out)


def cmd_eval(ns, out, err):
    ckpt = load_checkpoint(ns.model)
    report = evaluation.evaluate(ckpt.params, ckpt.vocabulary, evaluation.load_benchmark(ns.benchmark))
    print(report, file=out)


def cmd_neighbors(ns, out, err):
    ckpt = load_checkpoint(ns.model)
    try:
        hits = evaluation.nearest_neighbors(ckpt.params, ckpt.vocabulary, ns.token, ns.topk)
    except KeyError as exc:
        raise FormatError(exc.args[0]) from None
    for tok, sim in hits:
        print(f"{tok}\t{sim:.6f}", file=out)


def cmd_export(ns, out, err):
    ckpt = load_checkpoint(ns.model)
    evaluation.export_embeddings(ckpt.params, ckpt.vocabulary, ns.out)
    print(f"wrote {len(ckpt.vocabulary)} vectors to {ns.out}", file=out)


def cmd_synth_gen(ns, out, err):
    try:
        config = synth.SynthConfig(
            branching=ns.branching,
            depth=ns.depth,
            docs=ns.docs,
            doc_length=ns.doclen,
            alpha=ns.alpha,
            rare_fraction=ns.rare_frac,
            rare_max=ns.rare_max,
            seed=ns.seed,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    target = Path(ns.out)
    target.mkdir(parents=True, exist_ok=True)
    (target / "hierarchy.tsv").write_text(synth.generate_hierarchy(config), encoding="utf-8")
    hierarchy = read_hierarchy(target / "hierarchy.tsv")
    (target / "corpus.txt").write_text(synth.generate_corpus(config, hierarchy), encoding="utf-8")
    rare = synth.rare_leaves(config, hierarchy)
    (target / "rare.txt").write_text("".join(t + "\n" for t in rare), encoding="utf-8")
    (target / "benchmark_all.tsv").write_text(
        synth.ground_truth_pairs(hierarchy, "all", ns.seed, n_pairs=ns.pairs), encoding="utf-8"
    )
    (target / "benchmark_rare.tsv").write_text(
        synth.ground_truth_pairs(hierarchy, "rare-only", ns.seed, rare=rare, n_pairs=ns.pairs), encoding="utf-8"
    )
    for name in ("hierarchy.tsv", "corpus.txt", "benchmark_all.tsv", "benchmark_rare.tsv", "rare.txt"):
        print(target / name, file=out)


def cmd_gradcheck(ns, out, err):
    rng = np.random.default_rng(ns.seed)
    worst = 0.0
    for mode in nn.MODES:
        mode_worst = 0.0
        for _ in range(ns.instances):
            params, example = nn.random_instance(rng, mode, n=ns.vocab, d=ns.dim)
            _, trace = nn.nll_loss(example, params)
            analytic = nn.backward(trace, example, params)
            numeric = nn.finite_diff_grad(example, params, 1e-5)
            mode_worst = max(mode_worst, nn.max_relative_error(analytic, numeric))
        print(f"{mode}: max_rel_error={mode_worst:.3e}", file=out)
        worst = max(worst, mode_worst)
    print(f"max_rel_error={worst:.3e}", file=out)
    if not worst < 1e-4:
        print(f"error: gradient check failed (max relative error {worst:.3e} >= 1e-4)", file=err)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kbvec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    p.add_argument("--mode", choices=nn.MODES)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--clip", type=float, help="max global gradient norm; 0 disables")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Spearman rho on a similarity benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--benchmark", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("neighbors", help="nearest neighbours of a token")
    p.add_argument("--model", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("token")
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("export", help="write input embeddings in text format")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth-gen", help="generate a synthetic hierarchy, corpus and benchmarks")
    defaults = synth.SynthConfig()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--branching", type=int, default=defaults.branching)
    p.add_argument("--depth", type=int, default=defaults.depth)
    p.add_argument("--docs", type=int, default=defaults.docs)
    p.add_argument("--doclen", type=int, default=defaults.doc_length)
    p.add_argument("--alpha", type=float, default=defaults.alpha)
    p.add_argument("--rare-frac", type=float, default=defaults.rare_fraction)
    p.add_argument("--rare-max", type=int, default=defaults.rare_max)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--pairs", type=int, help="sample this many benchmark pairs (default: all)")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        ns = build_parser().parse_args(argv)
        code = ns.func(ns, out, err)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    except (
        FormatError,
        ConsistencyError,
        ConfigError,
        UndefinedCorrelationError,
        UndefinedSimilarityError,
    ) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DATA
    except (TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
