import math

import numpy as np
import pytest

from tsground.branch import COS_FLOOR, GraphLayer, ReasoningBranch
from tsground.diffcore import Tensor, no_grad
from tsground.encoders import StreamEncoder

from helpers import random_boxes


def branch(dim=4, seed=0, **kw):
    return ReasoningBranch("appearance", dim, np.random.default_rng(seed), **kw)


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64))


class TestCrossModalInteraction:
    def test_single_word_is_copied(self):
        rng = np.random.default_rng(0)
        br = branch()
        Q = rng.normal(size=(1, 1, 4))
        F = rng.normal(size=(1, 6, 4))
        _, att = br.cross_modal_interaction(t(F), t(Q), np.ones((1, 1), bool))
        np.testing.assert_array_equal(att.data, 1.0)
        textual = att.data @ Q
        np.testing.assert_allclose(textual, np.broadcast_to(Q, (1, 6, 4)))

    def test_zero_gate_halves(self):
        rng = np.random.default_rng(1)
        br = branch()
        br.gate.W.data[:] = 0
        F = rng.normal(size=(1, 6, 4))
        out, _ = br.cross_modal_interaction(t(F), t(rng.normal(size=(1, 3, 4))), np.ones((1, 3), bool))
        np.testing.assert_allclose(out.data, 0.5 * F, atol=1e-15)

    def test_hand_trace(self):
        br = branch(dim=2)
        br.W1.data = np.array([[0.5, -0.2], [0.1, 0.3]])
        br.W2.data = np.array([[0.4, 0.0], [-0.3, 0.2]])
        br.b1.data = np.array([0.05, -0.1])
        br.w.data = np.array([[1.0], [-0.5]])
        br.gate.W.data = np.array([[0.2, -0.4], [0.6, 0.1]])
        br.gate.b.data = np.array([0.0, 0.3])
        f = np.array([1.0, -2.0])
        q = np.array([[0.3, 0.7], [-1.0, 0.5]])
        m = [sum(br.w.data[i, 0] * math.tanh(sum(f[j] * br.W1.data[j, i] for j in range(2))
                                              + sum(qn[j] * br.W2.data[j, i] for j in range(2))
                                              + br.b1.data[i]) for i in range(2)) for qn in q]
        a = [math.exp(x) / sum(math.exp(y) for y in m) for x in m]
        fq = [a[0] * q[0, i] + a[1] * q[1, i] for i in range(2)]
        gate = [1 / (1 + math.exp(-(sum(fq[j] * br.gate.W.data[j, i] for j in range(2))
                                     + br.gate.b.data[i]))) for i in range(2)]
        want = [gate[i] * f[i] for i in range(2)]
        out, _ = br.cross_modal_interaction(t(f[None, None]), t(q[None]), np.ones((1, 2), bool))
        np.testing.assert_allclose(out.data[0, 0], want, atol=1e-14)

    def test_masked_words_ignored(self):
        rng = np.random.default_rng(2)
        br = branch()
        F, Q = rng.normal(size=(1, 5, 4)), rng.normal(size=(1, 3, 4))
        mask = np.array([[True, True, False]])
        a, att = br.cross_modal_interaction(t(F), t(Q), mask)
        Q2 = Q.copy()
        Q2[0, 2] = 100.0
        b, _ = br.cross_modal_interaction(t(F), t(Q2), mask)
        assert np.all(att.data[..., 2] == 0)
        np.testing.assert_allclose(a.data, b.data)

    def test_gate_attenuates(self):
        rng = np.random.default_rng(3)
        br = branch(dim=8)
        for _ in range(100):
            F = rng.normal(0, 3, size=(1, 6, 8))
            out, _ = br.cross_modal_interaction(t(F), t(rng.normal(size=(1, 4, 8))),
                                                np.ones((1, 4), bool))
            nz = F != 0
            assert np.all(np.abs(out.data[nz]) < np.abs(F[nz]))


class TestGraph:
    def test_zero_w7_passes_through(self):
        rng = np.random.default_rng(0)
        layer = GraphLayer(4, rng)
        layer.W7.data[:] = 0
        F = rng.normal(size=(1, 5, 4))
        out, _ = layer(t(F))
        np.testing.assert_array_equal(out.data, F)

    def test_single_node(self):
        out, A = GraphLayer(4, np.random.default_rng(0))(t(np.ones((1, 1, 4))))
        np.testing.assert_array_equal(A.data, [[[1.0]]])

    def test_hand_trace(self):
        layer = GraphLayer(2, np.random.default_rng(0))
        layer.W4.data = np.array([[1.0, 0.5], [0.0, -1.0]])
        layer.W5.data = np.array([[0.2, 0.1], [0.3, 0.4]])
        layer.W6.data = np.array([[1.0, 2.0], [-1.0, 0.5]])
        layer.W7.data = np.array([[0.5, 0.0], [0.25, 1.0]])
        F = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
        a, b = F @ layer.W4.data, F @ layer.W5.data
        S = np.array([[sum(a[i, k] * b[j, k] for k in range(2)) for j in range(3)] for i in range(3)])
        A = np.array([[math.exp(S[i, j]) / sum(math.exp(x) for x in S[i]) for j in range(3)]
                      for i in range(3)])
        want = A @ F @ layer.W6.data @ layer.W7.data + F
        out, At = layer(t(F[None]))
        np.testing.assert_allclose(At.data[0], A, atol=1e-14)
        np.testing.assert_allclose(out.data[0], want, atol=1e-14)

    def test_row_stochastic(self):
        rng = np.random.default_rng(1)
        layer = GraphLayer(6, rng)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            _, A = layer(t(rng.normal(0, 2, size=(2, n, 6))))
            assert np.all(A.data >= 0)
            np.testing.assert_allclose(A.data.sum(-1), 1.0, atol=1e-6)


class TestFuseObjects:
    def test_single_object(self):
        rng = np.random.default_rng(0)
        br = branch()
        F = rng.normal(size=(1, 3, 4))
        H, w, _ = br.fuse_objects(t(F), t(rng.normal(size=(1, 4))), 3, 1)
        np.testing.assert_allclose(H.data, F, atol=1e-15)
        np.testing.assert_array_equal(w.data, 1.0)

    def test_identical_objects(self):
        rng = np.random.default_rng(1)
        br = branch()
        f = rng.normal(size=4)
        F = np.tile(f, (1, 6, 1))
        H, _, _ = br.fuse_objects(t(F), t(rng.normal(size=(1, 4))), 2, 3)
        np.testing.assert_allclose(H.data[0], np.tile(f, (2, 1)), atol=1e-14)

    def test_hand_trace(self):
        br = branch(dim=2)
        br.Wq.data = np.array([[1.0, 0.0], [0.5, 2.0]])
        F = np.array([[3.0, 4.0], [1.0, -1.0]])
        qg = np.array([0.5, 0.25])
        g = qg @ br.Wq.data
        c = [(f @ g) / (math.hypot(*f) * math.hypot(*g)) for f in F]
        e = [math.exp(x) for x in c]
        w = [x / sum(e) for x in e]
        H, wt, ct = br.fuse_objects(t(F[None]), t(qg[None]), 1, 2)
        np.testing.assert_allclose(ct.data[0, 0], c, atol=1e-14)
        np.testing.assert_allclose(wt.data[0, 0], w, atol=1e-14)
        np.testing.assert_allclose(H.data[0, 0], w[0] * F[0] + w[1] * F[1], atol=1e-14)

    def test_zero_vector_cosine_is_finite(self):
        br = branch()
        _, w, c = br.fuse_objects(t(np.zeros((1, 2, 4))), t(np.ones((1, 4))), 1, 2)
        assert np.all(c.data == 0) and np.all(np.isfinite(w.data))
        assert COS_FLOOR == 1e-8

    def test_properties(self):
        rng = np.random.default_rng(2)
        br = branch(dim=6)
        for _ in range(100):
            T, K = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            F = rng.normal(0, 2, size=(2, T * K, 6))
            H, w, c = br.fuse_objects(t(F), t(rng.normal(size=(2, 6))), T, K)
            assert np.all(np.abs(c.data) <= 1 + 1e-12)
            assert np.all(w.data >= 0)
            np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-6)
            objs = F.reshape(2, T, K, 6)
            assert np.all(H.data >= objs.min(axis=2) - 1e-6)
            assert np.all(H.data <= objs.max(axis=2) + 1e-6)


def test_branch_outputs_are_permutation_invariant():
    rng = np.random.default_rng(3)
    D, Din = 8, 5
    enc = StreamEncoder(Din, D, 2, np.random.default_rng(1))
    br = branch(dim=D, seed=2)
    for _ in range(100):
        T, K, N = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        local, glob = rng.normal(size=(1, T, K, Din)), rng.normal(size=(1, T, Din))
        boxes = random_boxes(rng, T, K)[None]
        Q, qg = t(rng.normal(size=(1, N, D))), t(rng.normal(size=(1, D)))
        mask = np.ones((1, N), bool)
        perm = np.stack([rng.permutation(K) for _ in range(T)])
        idx = np.arange(T)[:, None]
        with no_grad():
            a = br(enc(local, boxes, glob), Q, mask, qg, T, K)
            b = br(enc(local[:, idx, perm], boxes[:, idx, perm], glob), Q, mask, qg, T, K)
        np.testing.assert_allclose(b.H.data, a.H.data, atol=1e-5)


@pytest.mark.parametrize("use_gate,use_graph", [(False, True), (True, False), (False, False)])
def test_ablated_stages_are_skipped(use_gate, use_graph):
    rng = np.random.default_rng(4)
    br = branch(use_gate=use_gate, use_graph=use_graph)
    out = br(t(rng.normal(size=(1, 4, 4))), t(rng.normal(size=(1, 2, 4))), np.ones((1, 2), bool),
             t(rng.normal(size=(1, 4))), 2, 2)
    assert (out.word_weights is None) == (not use_gate)
    assert (out.adjacency is None) == (not use_graph)
