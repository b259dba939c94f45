"""Acceptance run: one PASS/FAIL line per criterion.

The desk-scale training criteria take most of an hour on a single core;
select them away with ``-m "not slow"`` for a quick pass.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

from tsground.cli import main
from tsground.config import ExperimentConfig, tiny_config
from tsground.diffcore import Tensor, finite_difference_check, no_grad, redraw_zero_matrices
from tsground.grounder import generate_proposals, predict, recall_at_n, temporal_iou
from tsground.lab import (evaluate_model, generate_dataset, generate_sample,
                          oracle_ranking_report, random_ranking_report, train)
from tsground.lab.ablation import STANDARD_VARIANTS, ablate
from tsground.lab.evaluate import metric_key
from tsground.lab.io import checkpoint_bytes, dataset_bytes, parse_checkpoint, parse_dataset
from tsground.lab.synthetic import train_test_split
from tsground.lab.train import model_from_checkpoint
from tsground.model import GroundingNetwork, collate

R1_05, R1_07 = metric_key(1, 0.5), metric_key(1, 0.7)
INSTANCES = 100


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        return ok
    return emit


def test_criterion_1_gradient_check(verdict):
    c = tiny_config()
    model = GroundingNetwork(c)
    # identity-initialized projections would zero the gradient behind them
    redrawn = redraw_zero_matrices(model, np.random.default_rng(1))
    batch = collate(generate_dataset(c, 1, c.seed), np.float64, max_words=5)
    start = time.perf_counter()
    report = finite_difference_check(model, batch, h=1e-4, tol=1e-3)
    elapsed = time.perf_counter() - start
    worst = report.worst(1)[0]
    live = {}
    for e in report.entries:
        live[e.name] = live.get(e.name, False) or e.analytic != 0.0
    dead = sorted(n for n, v in live.items() if not v)
    ok = report.passed and elapsed <= 300 and not dead
    assert verdict(1, ok, f"{len(report.entries)} entries in {len(live)} parameters, "
                          f"{len(report.failures)} failing, worst rel {worst.rel_error:.2e} "
                          f"({worst.name}), {len(redrawn)} zero matrices redrawn, "
                          f"dead {dead}, {elapsed:.0f}s"), report.summary()


# invariant instances; each returns nothing and raises on violation

def _model_instance(i):
    c = tiny_config(seed=i)
    model = GroundingNetwork(c)
    batch = collate([generate_sample(i, c, 0)], np.float64, c.max_words)
    return c, model, batch


def inv_softmax_normalizations(i):
    _, model, batch = _model_instance(i)
    with no_grad():
        out = model(batch)
    dists = [out.fused.frame_weights[s] for s in out.fused.frame_weights]
    for br in out.branches.values():
        dists += [br.object_weights, br.word_weights, br.adjacency]
    dists += [a for a in out.fused.attention.values() if a is not None]
    for d in dists:
        assert np.all(d >= 0)
        np.testing.assert_allclose(d.sum(-1), 1.0, atol=1e-6)


def inv_gate_attenuation(i):
    _, model, batch = _model_instance(i)
    with no_grad():
        out = model(batch)
        for s, F in out.encoded.items():
            gated, _ = model.branches[s].cross_modal_interaction(F, out.query.Q, batch.mask)
            nz = F.data != 0
            assert np.all(np.abs(gated.data[nz]) < np.abs(F.data[nz]))


def inv_adjacency_rows(i):
    rng = np.random.default_rng(i)
    layer = GroundingNetwork(tiny_config(seed=i)).branches["motion"].graph[0]
    n = int(rng.integers(1, 30))
    with no_grad():
        _, A = layer(Tensor(rng.normal(0, 3, size=(2, n, 16))))
    assert np.all(A.data >= 0)
    np.testing.assert_allclose(A.data.sum(-1), 1.0, atol=1e-6)


def inv_convex_hull_fusion(i):
    rng = np.random.default_rng(i)
    br = GroundingNetwork(tiny_config(seed=i)).branches["threed"]
    T, K = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    F = rng.normal(0, 2, size=(1, T * K, 16))
    with no_grad():
        H, _, _ = br.fuse_objects(Tensor(F), Tensor(rng.normal(size=(1, 16))), T, K)
    objs = F.reshape(1, T, K, 16)
    assert np.all(H.data >= objs.min(axis=2) - 1e-9)
    assert np.all(H.data <= objs.max(axis=2) + 1e-9)


def inv_residual_passthrough(i):
    rng = np.random.default_rng(i)
    layer = GroundingNetwork(tiny_config(seed=i)).branches["appearance"].graph[0]
    layer.W7.data[:] = 0
    F = rng.normal(size=(1, int(rng.integers(1, 20)), 16))
    with no_grad():
        out, _ = layer(Tensor(F))
    np.testing.assert_array_equal(out.data, F)


def inv_object_permutation(i):
    c, model, batch = _model_instance(i)
    rng = np.random.default_rng(i)
    perm = np.stack([rng.permutation(c.K) for _ in range(c.T)])
    rows = np.arange(c.T)[:, None]
    shuffled = collate([generate_sample(i, c, 0)], np.float64, c.max_words)
    shuffled.boxes = batch.boxes[:, rows, perm]
    shuffled.local = {s: v[:, rows, perm] for s, v in batch.local.items()}
    with no_grad():
        a, b = model(batch), model(shuffled)
    for s in a.branches:
        np.testing.assert_allclose(b.branches[s].H.data, a.branches[s].H.data, atol=1e-5)


def inv_predict_clamping(i):
    rng = np.random.default_rng(i)
    T = int(rng.integers(4, 64))
    props = generate_proposals(T, sorted(set(rng.integers(1, T + 1, size=3).tolist())))
    R = len(props)
    ranked = predict(props.anchors, rng.uniform(size=R), rng.normal(0, T / 2, size=(R, 2)), T,
                     top_n=5)
    for s, e, _ in ranked:
        assert 0.0 <= s < e <= T
    scores = [r[2] for r in ranked]
    assert scores == sorted(scores, reverse=True)


def inv_enumeration_determinism(i):
    rng = np.random.default_rng(i)
    T = int(rng.integers(1, 80))
    widths = sorted(set(rng.integers(1, T + 1, size=int(rng.integers(1, 5))).tolist()))
    stride = int(rng.integers(1, 4))
    a, b = generate_proposals(T, widths, stride), generate_proposals(T, widths, stride)
    want = [(t, t + w) for t in range(0, T, stride) for w in widths if t + w <= T]
    assert a.anchors.tolist() == b.anchors.tolist()
    assert sorted(map(tuple, a.anchors.astype(int).tolist())) == sorted(want)


INVARIANTS = [inv_softmax_normalizations, inv_gate_attenuation, inv_adjacency_rows,
              inv_convex_hull_fusion, inv_residual_passthrough, inv_object_permutation,
              inv_predict_clamping, inv_enumeration_determinism]


def test_criterion_2_invariants(verdict):
    failures, counts = {}, {}
    for inv in INVARIANTS:
        counts[inv.__name__] = 0
        for i in range(INSTANCES):
            try:
                inv(i)
            except AssertionError as exc:
                failures.setdefault(inv.__name__, (i, str(exc)[:200]))
            counts[inv.__name__] += 1
    ok = not failures and min(counts.values()) >= INSTANCES
    detail = f"{len(INVARIANTS)} invariants x {min(counts.values())} seeded instances"
    if failures:
        detail += f", failing: {sorted(failures)}"
    assert verdict(2, ok, detail), failures


# independent metric oracles over exact rationals

def oracle_iou(a, b):
    a = [Fraction(str(x)) for x in a]
    b = [Fraction(str(x)) for x in b]
    inter = max(Fraction(0), min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def oracle_recall(predictions, gts, n, m):
    hits = 0
    for preds, gt in zip(predictions, gts):
        for s, e, _ in preds[:n]:
            if e > s and oracle_iou((s, e), gt) > Fraction(str(m)):
                hits += 1
                break
    return 100.0 * hits / len(predictions)


def _random_segment(rng, T):
    s, e = sorted(rng.choice(T * 4 + 1, size=2, replace=False) / 4)
    return float(s), float(e)


def test_criterion_3_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    mismatches, worst_iou = 0, 0.0
    for n in (1, 5):
        for m in (0.5, 0.7):
            for _ in range(1000):
                k = int(rng.integers(1, 6))
                T = int(rng.integers(4, 40))
                preds = [[(*_random_segment(rng, T), float(rng.uniform()))
                          for _ in range(int(rng.integers(0, 8)))] for _ in range(k)]
                gts = [_random_segment(rng, T) for _ in range(k)]
                if recall_at_n(preds, gts, n, m) != oracle_recall(preds, gts, n, m):
                    mismatches += 1
    for _ in range(1000):
        a, b = rng.uniform(-5, 50, size=(2, 2))
        a, b = np.sort(a), np.sort(b)
        if a[1] > a[0] and b[1] > b[0]:
            worst_iou = max(worst_iou, abs(temporal_iou(a, b) - float(oracle_iou(a, b))))
    ok = mismatches == 0 and worst_iou <= 1e-12
    assert verdict(3, ok, f"recall mismatches {mismatches}/4000 sets, "
                          f"max IoU deviation {worst_iou:.1e}")


@pytest.fixture(scope="module")
def desk():
    c = ExperimentConfig()
    train_set, test_set = train_test_split(c)
    return c, train_set, test_set


@pytest.fixture(scope="module")
def trained_full(desk):
    c, train_set, test_set = desk
    start = time.perf_counter()
    ck, history = train(c, train_set, test_set)
    elapsed = time.perf_counter() - start
    report = evaluate_model(model_from_checkpoint(ck), test_set)
    return report["metrics"], len(history), elapsed


@pytest.mark.slow
def test_criterion_4_synthetic_learnability(verdict, desk, trained_full):
    c, _, test_set = desk
    trained, epochs, elapsed = trained_full
    untrained = evaluate_model(GroundingNetwork(c), test_set)["metrics"]
    rand = random_ranking_report(c, test_set)["metrics"]
    oracle = oracle_ranking_report(c, test_set)["metrics"]
    checks = {
        "R@1,0.5>=85": trained[R1_05] >= 85,
        "R@1,0.7>=60": trained[R1_07] >= 60,
        "untrained~random": abs(untrained[R1_05] - rand[R1_05]) <= 10,
        "<=oracle": all(trained[k] <= oracle[k] and untrained[k] <= oracle[k] for k in oracle),
        "budget": epochs <= 30 and elapsed <= 1800,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (f"trained R@1 {trained[R1_05]:.1f}/{trained[R1_07]:.1f} (IoU .5/.7), "
              f"untrained {untrained[R1_05]:.1f} vs random {rand[R1_05]:.1f}, "
              f"oracle {oracle[R1_05]:.1f}/{oracle[R1_07]:.1f}, {epochs} epochs in {elapsed:.0f}s")
    if failed:
        detail += f"; failed {failed}"
    assert verdict(4, not failed, detail)


@pytest.mark.slow
def test_criterion_5_ablation_direction(verdict, desk, trained_full):
    c, train_set, test_set = desk
    full = trained_full[0][R1_05]
    scores = {}
    for name, flags in STANDARD_VARIANTS.items():
        if name == "full":
            continue
        variant = c.disable(flags)
        ck, _ = train(variant, train_set, test_set, model=ablate(c, flags))
        scores[name] = evaluate_model(model_from_checkpoint(ck), test_set)["metrics"][R1_05]
    ok = all(full >= s for s in scores.values())
    listing = ", ".join(f"{k} {v:.1f}" for k, v in scores.items())
    assert verdict(5, ok, f"full {full:.1f} vs {listing}")


def _pipeline(root, config_path):
    root.mkdir()
    steps = [
        ["generate", "--config", config_path, "--seed", "7", "--count", "24",
         "--out", root / "train.ma3s"],
        ["generate", "--config", config_path, "--seed", "7", "--count", "8", "--start-id", "24",
         "--out", root / "test.ma3s"],
        ["train", "--config", config_path, "--data", root / "train.ma3s",
         "--eval", root / "test.ma3s", "--out", root / "model.ma3c"],
        ["eval", "--ckpt", root / "model.ma3c", "--data", root / "test.ma3s",
         "--report", root / "report.json"],
    ]
    return [main([str(a) for a in step]) for step in steps]


def test_criterion_6_determinism(verdict, tmp_path, capsys):
    config_path = tmp_path / "config.json"
    config_path.write_text(tiny_config(epochs=3).to_json())
    codes = _pipeline(tmp_path / "a", config_path) + _pipeline(tmp_path / "b", config_path)
    capsys.readouterr()
    names = ["train.ma3s", "test.ma3s", "model.ma3c", "report.json"]
    identical = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                 for n in names}
    raw = {n: (tmp_path / "a" / n).read_bytes() for n in names}
    samples, cfg = parse_dataset(raw["train.ma3s"])
    round_trips = {
        "dataset": dataset_bytes(samples, cfg) == raw["train.ma3s"],
        "checkpoint": checkpoint_bytes(parse_checkpoint(raw["model.ma3c"])) == raw["model.ma3c"],
        "report": json.dumps(json.loads(raw["report.json"]), sort_keys=True, indent=1).encode()
                  == raw["report.json"],
    }
    ok = all(c == 0 for c in codes) and all(identical.values()) and all(round_trips.values())
    detail = (f"exit codes {codes}, byte-identical {sum(identical.values())}/{len(names)}, "
              f"round-trips {[k for k, v in round_trips.items() if v]}")
    assert verdict(6, ok, detail)
