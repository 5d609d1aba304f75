"""Model-ordering experiment on synthetic data.

Generates a synthetic hierarchy, corpus and two benchmarks (all leaf pairs and
pairs touching a rare leaf) per seed, trains one model per mode and scores
each on both benchmarks. Everything goes through the on-disk formats.
"""

from __future__ import annotations

import dataclasses
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kbvec import evaluation, synth
from kbvec.hierarchy import read_hierarchy
from kbvec.trainer import TrainConfig, train
from kbvec.vocab import load_corpus

ORDER = ("kb_only", "cbow", "joint")


@dataclass
class SeedResult:
    seed: int
    rho_all: dict
    rho_rare: dict
    first_loss: dict
    final_loss: dict


def write_synthetic(config: synth.SynthConfig, directory) -> dict:
    """Write hierarchy, corpus and both benchmarks; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "hierarchy": directory / "hierarchy.tsv",
        "corpus": directory / "corpus.txt",
        "all": directory / "benchmark_all.tsv",
        "rare": directory / "benchmark_rare.tsv",
    }
    paths["hierarchy"].write_text(synth.generate_hierarchy(config), encoding="utf-8")
    hierarchy = read_hierarchy(paths["hierarchy"])
    paths["corpus"].write_text(synth.generate_corpus(config, hierarchy), encoding="utf-8")
    rare = synth.rare_leaves(config, hierarchy)
    paths["all"].write_text(synth.ground_truth_pairs(hierarchy, "all", config.seed), encoding="utf-8")
    paths["rare"].write_text(
        synth.ground_truth_pairs(hierarchy, "rare-only", config.seed, rare=rare), encoding="utf-8"
    )
    return paths


def run_seed(seed: int, synth_config: synth.SynthConfig, train_config: TrainConfig, modes=ORDER) -> SeedResult:
    with tempfile.TemporaryDirectory() as tmp:
        paths = write_synthetic(dataclasses.replace(synth_config, seed=seed), tmp)
        documents = load_corpus(paths["corpus"])
        hierarchy = read_hierarchy(paths["hierarchy"])
        bench_all = evaluation.load_benchmark(paths["all"])
        bench_rare = evaluation.load_benchmark(paths["rare"])
    result = SeedResult(seed, {}, {}, {}, {})
    for mode in modes:
        config = dataclasses.replace(train_config, mode=mode, seed=seed)
        params, report = train(documents, hierarchy, config)
        result.rho_all[mode] = evaluation.evaluate(params, report.vocabulary, bench_all).spearman_rho
        result.rho_rare[mode] = evaluation.evaluate(params, report.vocabulary, bench_rare).spearman_rho
        result.first_loss[mode] = report.epoch_losses[0]
        result.final_loss[mode] = report.epoch_losses[-1]
    return result


def run_ordering(seeds, synth_config=None, train_config=None, modes=ORDER, progress=None) -> list[SeedResult]:
    synth_config = synth_config or synth.SynthConfig()
    train_config = train_config or TrainConfig(dim=16, epochs=30)
    results = []
    for seed in seeds:
        results.append(run_seed(seed, synth_config, train_config, modes))
        if progress is not None:
            progress(results[-1])
    return results


def mean_rho(results, which="all") -> dict:
    field = "rho_all" if which == "all" else "rho_rare"
    modes = getattr(results[0], field).keys()
    return {m: float(np.mean([getattr(r, field)[m] for r in results])) for m in modes}
