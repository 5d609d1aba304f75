"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The summary is printed at the end of the pytest run under "acceptance criteria".
"""

import io
import time

import numpy as np
import pytest

import oracles
from kbvec import evaluation, experiment, nn, synth
from kbvec.cli import run as cli_run
from kbvec.evaluation import BenchmarkPair, evaluate, export_embeddings, import_embeddings, spearman
from kbvec.hierarchy import read_hierarchy
from kbvec.trainer import TrainConfig, checkpoint_bytes, load_checkpoint, save_checkpoint, train
from kbvec.vocab import ExampleArrays, Vocabulary, build_vocabulary, extract_examples, load_corpus

SEEDS = range(5)


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli_run([str(a) for a in argv], out, err)
    assert code == 0, err.getvalue()
    return out.getvalue()


# -- 1 ---------------------------------------------------------------------------------


def test_c1_gradient_fidelity(record_criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {}
    for mode in nn.MODES:
        worst[mode] = 0.0
        for _ in range(10):
            params, example = nn.random_instance(rng, mode, n=20, d=8, max_context=6, n_ancestors=4)
            _, trace = nn.nll_loss(example, params)
            analytic = nn.backward(trace, example, params)
            numeric = nn.finite_diff_grad(example, params, epsilon=1e-5)
            worst[mode] = max(worst[mode], nn.max_relative_error(analytic, numeric))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 10.0
    detail = " ".join(f"{m}={e:.2e}" for m, e in worst.items()) + f" time={elapsed:.1f}s"
    record_criterion(1, ok, detail)
    assert ok, detail


# -- 2 ---------------------------------------------------------------------------------

TOY = (
    "the heart pumps blood through the aorta and the aorta carries blood to the body "
    "while the lungs oxygenate blood for the heart to pump again and again each day"
).split()


def test_c2_cbow_reduction(record_criterion):
    assert len(TOY) == 30
    vocab = build_vocabulary([TOY])
    rng = np.random.default_rng(7)
    n, d = len(vocab), 5
    params = nn.ModelParams(
        rng.normal(0, 0.7, (n, d)),
        rng.normal(0, 0.7, (n, d)),
        nn.LstmParams.zeros(d, bias=False),
        "cbow",
    )
    examples = extract_examples(vocab.encode(TOY), c=5)
    losses = nn.forward(params, ExampleArrays.from_examples(examples)).losses
    emb, out = params.input_embeddings.tolist(), params.output_embeddings.tolist()
    worst = max(
        abs(loss - oracles.cbow_nll(emb, out, ex.context, ex.target)) for loss, ex in zip(losses, examples)
    )
    ok = len(examples) == 30 and worst <= 1e-10
    record_criterion(2, ok, f"max_abs_diff={worst:.2e} over {len(examples)} examples")
    assert ok


# -- 3 ---------------------------------------------------------------------------------


def test_c3_lstm_oracle(record_criterion):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        lstm = nn.LstmParams(rng.normal(0, 1, (4, 2, 2)), rng.normal(0, 1, (4, 2, 2)))
        emb = rng.normal(0, 1, (5, 2))
        ids = rng.integers(0, 5, 3)
        got = nn.lstm_encode(lstm, ids, emb)
        want = oracles.lstm_encode(
            oracles.split_gates(lstm.W), oracles.split_gates(lstm.I), [emb[i].tolist() for i in ids], 2
        )
        worst = max(worst, float(np.max(np.abs(got - np.array(want)))))
    zero = nn.lstm_encode(nn.LstmParams.zeros(2, bias=False), [0, 1, 2], rng.normal(0, 1, (3, 2)))
    zero_exact = bool(np.all(zero == 0.0))
    ok = worst <= 1e-12 and zero_exact
    record_criterion(3, ok, f"max_abs_diff={worst:.2e} zero_weights_exact={zero_exact}")
    assert ok


# -- 4 ---------------------------------------------------------------------------------


def test_c4_spearman_oracle(record_criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        xs = rng.normal(size=50)
        ys = rng.normal(size=50)
        # inject ties by copying values within each vector
        xs[rng.integers(0, 50, 10)] = xs[rng.integers(0, 50)]
        ys[rng.integers(0, 50, 10)] = ys[rng.integers(0, 50)]
        worst = max(worst, abs(spearman(xs, ys) - oracles.rank_pearson(xs.tolist(), ys.tolist())))
    perfect = spearman([1, 2, 3, 4, 5], [2, 4, 6, 8, 10])
    reverse = spearman([1, 2, 3, 4, 5], [10, 8, 6, 4, 2])
    example = spearman([1, 2, 3, 4], [1, 3, 2, 4])
    ok = worst <= 1e-12 and perfect == 1.0 and reverse == -1.0 and abs(example - 0.8) <= 1e-12
    record_criterion(
        4, ok, f"max_abs_diff={worst:.2e} perfect={perfect!r} reversed={reverse!r} example={example!r}"
    )
    assert ok


# -- 5 and 9 share one run of the ordering experiment ------------------------------------


@pytest.fixture(scope="module")
def ordering():
    start = time.perf_counter()
    results = experiment.run_ordering(SEEDS, synth.SynthConfig(), TrainConfig(dim=16, epochs=30))
    return results, time.perf_counter() - start


def test_c5_mode_ordering(ordering, record_criterion):
    results, elapsed = ordering
    full = experiment.mean_rho(results, "all")
    rare = experiment.mean_rho(results, "rare")
    ordered = full["kb_only"] < full["cbow"] < full["joint"]
    margin = rare["joint"] - rare["cbow"]
    ok = ordered and margin >= 0.05 and elapsed < 300.0
    detail = (
        "all: " + " ".join(f"{m}={full[m]:.3f}" for m in experiment.ORDER)
        + " | rare: " + " ".join(f"{m}={rare[m]:.3f}" for m in experiment.ORDER)
        + f" | joint-cbow(rare)={margin:+.3f} time={elapsed:.0f}s"
    )
    record_criterion(5, ok, detail)
    assert ordered, detail
    assert margin >= 0.05, detail
    assert elapsed < 300.0, detail


def test_c9_training_sanity(ordering, record_criterion):
    results, _ = ordering
    failures = [
        (r.seed, m, r.first_loss[m], r.final_loss[m])
        for r in results
        for m in experiment.ORDER
        if not r.final_loss[m] < r.first_loss[m]
    ]
    ok = not failures and len(results) == 5
    worst = max(r.final_loss[m] / r.first_loss[m] for r in results for m in experiment.ORDER)
    record_criterion(9, ok, f"{len(results) * 3} runs, worst final/first ratio={worst:.3f}")
    assert ok, failures


# -- 6 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("det")
    cli("synth-gen", "--out", root, "--branching", 2, "--depth", 3, "--docs", 150, "--doclen", 10, "--seed", 5)
    return root


def test_c6_determinism(small_synth, tmp_path, record_criterion):
    common = [
        "train", "--corpus", small_synth / "corpus.txt", "--kb", small_synth / "hierarchy.tsv",
        "--mode", "joint", "--dim", 8, "--epochs", 3, "--batch", 32, "--seed", 9,
    ]
    out_a = cli(*common, "--out", tmp_path / "a.ckpt")
    cli(*common, "--out", tmp_path / "b.ckpt")
    out_t = cli(*common, "--threads", 4, "--out", tmp_path / "t.ckpt")
    identical = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    loss_1 = float(out_a.split()[0].split("=")[1])
    loss_4 = float(out_t.split()[0].split("=")[1])
    ok = identical and abs(loss_1 - loss_4) <= 1e-9
    record_criterion(6, ok, f"bit_identical={identical} |loss(1)-loss(4)|={abs(loss_1 - loss_4):.2e}")
    assert ok


# -- 7 ---------------------------------------------------------------------------------


def test_c7_round_trips(small_synth, tmp_path, record_criterion):
    documents = load_corpus(small_synth / "corpus.txt")
    hierarchy = read_hierarchy(small_synth / "hierarchy.tsv")
    params, report = train(documents, hierarchy, TrainConfig(dim=8, epochs=2, batch_size=32))

    export_embeddings(params, report.vocabulary, tmp_path / "e.txt")
    vocab, table = import_embeddings(tmp_path / "e.txt")
    export_err = float(np.max(np.abs(table - params.input_embeddings)))
    export_ok = vocab.tokens == report.vocabulary.tokens and export_err <= 1e-12

    save_checkpoint(tmp_path / "m.ckpt", params, report.vocabulary, report.optimizer_state)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    again = checkpoint_bytes(loaded.params, loaded.vocabulary, loaded.optimizer_state)
    ckpt_ok = again == (tmp_path / "m.ckpt").read_bytes()

    parsed = (
        len(hierarchy) > 0
        and len(documents) == 150
        and len(evaluation.load_benchmark(small_synth / "benchmark_all.tsv")) > 0
        and len(evaluation.load_benchmark(small_synth / "benchmark_rare.tsv")) > 0
    )
    ok = export_ok and ckpt_ok and parsed
    record_criterion(7, ok, f"export_err={export_err:.2e} checkpoint_bit_identical={ckpt_ok} synth_parsed={parsed}")
    assert ok


# -- 8 ---------------------------------------------------------------------------------


def test_c8_invariances(record_criterion):
    rng = np.random.default_rng(8)
    sum_err = shift_err = 0.0
    for _ in range(50):
        hidden = rng.normal(0, 3, 6)
        out = rng.normal(0, 3, (40, 6))
        p = nn.predict_softmax(hidden, out)
        sum_err = max(sum_err, abs(float(p.sum()) - 1.0))
        scores = out @ hidden
        shift = float(rng.normal(0, 100))
        shift_err = max(shift_err, float(np.max(np.abs(nn.log_softmax(scores + shift) - nn.log_softmax(scores)))))

    vocab = Vocabulary(tuple(f"w{i}" for i in range(12)), (1,) * 12)
    E = rng.normal(size=(12, 5))
    bench = [BenchmarkPair(f"w{i}", f"w{j}", float(rng.normal())) for i in range(12) for j in range(i + 1, 12)]
    base = evaluate(E, vocab, bench).spearman_rho
    scaled = [evaluate(E * s, vocab, bench).spearman_rho for s in (1e-6, 0.37, 2.0, 1e6)]
    scale_ok = all(r == base for r in scaled)
    ok = sum_err <= 1e-9 and shift_err <= 1e-12 and scale_ok
    record_criterion(8, ok, f"sum_err={sum_err:.2e} shift_err={shift_err:.2e} scale_invariant={scale_ok}")
    assert ok
