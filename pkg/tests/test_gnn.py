import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from unlearngraph.graphtypes import Graph
from unlearngraph.graphtypes import ContractViolation
from unlearngraph.gnn import ARCH_GCN
from unlearngraph.gnn import ARCH_GIN
from unlearngraph.gnn import ARCHS
from unlearngraph.gnn import ModelParams
from unlearngraph.gnn import init_params
from unlearngraph.gnn import normalize_adjacency
from unlearngraph.gnn import forward
from unlearngraph.gnn import backward
from unlearngraph.gnn import cross_entropy
from unlearngraph.gnn import loss
from unlearngraph.gnn import fd_grad_adjacency
from unlearngraph.gnn import fd_grad_params
from unlearngraph.gnn import save_params
from unlearngraph.gnn import load_params
from tests.graphs import random_graph
from tests.graphs import random_params
from tests.graphs import kink_margin


def max_rel_err(a, b):
    """max |a - b| / max(1, |a|, |b|) over all entries."""
    (a, b) = (np.asarray(a), np.asarray(b))
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale, initial=0.0))


def smooth_instances(arch, count, seed=0, num_layers=2, margin=1e-2):
    """Random (graph, params) pairs whose ReLU inputs all stay away
    from zero, so finite differences see a smooth loss."""
    rng = np.random.default_rng(seed)
    found = []
    draw = 0
    while len(found) < count:
        draw += 1
        assert draw < 200*count, 'could not draw smooth instances'
        n = int(rng.integers(2, 7))
        graph = random_graph(rng, n)
        params = random_params(seed*1000 + draw, arch,
                               num_layers=num_layers)
        if kink_margin(graph, params) > margin:
            found.append((graph, params))
    return found


def plain_gcn_logits(adjacency, features, params):
    """Loop-based GCN used as an independent reference."""
    n = adjacency.shape[0]
    a = adjacency.astype(float) + np.eye(n)
    deg = a.sum(axis=1)
    a_hat = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            a_hat[i, j] = a[i, j] / np.sqrt(deg[i] * deg[j])
    h = features
    for l in range(params.num_layers):
        h = np.maximum(a_hat.dot(h).dot(params['layer%d.W' % l]), 0.0)
    return h.mean(axis=0).dot(params['classifier.W']) + params['classifier.b']


def plain_gin_logits(adjacency, features, params):
    h = features
    a = adjacency.astype(float)
    for l in range(params.num_layers):
        p = 'layer%d.' % l
        u = (1.0 + params[p+'eps']) * h + a.dot(h)
        q = np.maximum(u.dot(params[p+'W1']) + params[p+'b1'], 0.0)
        h = np.maximum(q.dot(params[p+'W2']) + params[p+'b2'], 0.0)
    return h.mean(axis=0).dot(params['classifier.W']) + params['classifier.b']


class TestNormalize(unittest.TestCase):

    def test_empty_graph(self):
        npt.assert_array_equal(normalize_adjacency(np.zeros((4, 4))),
                               np.eye(4))

    def test_single_edge(self):
        a = np.array([[0, 1], [1, 0]])
        npt.assert_allclose(normalize_adjacency(a), np.full((2, 2), 0.5))

    def test_spectral_radius(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(1, 10)))
            a_hat = normalize_adjacency(g.adjacency)
            npt.assert_allclose(a_hat, a_hat.T)
            self.assertLessEqual(np.abs(np.linalg.eigvalsh(a_hat)).max(),
                                 1.0 + 1e-12)


class TestForward(unittest.TestCase):

    def test_matches_plain_implementation(self):
        rng = np.random.default_rng(11)
        for arch in ARCHS:
            for seed in range(10):
                g = random_graph(rng, int(rng.integers(1, 8)))
                params = random_params(seed, arch)
                (logits, _) = forward(g, params)
                plain = (plain_gcn_logits if arch == ARCH_GCN
                         else plain_gin_logits)
                npt.assert_allclose(
                    logits, plain(g.adjacency, g.features, params),
                    rtol=1e-12, atol=1e-12)

    def test_zero_weights_give_bias(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng, 5)
        params = init_params(ARCH_GCN, 3, 2, hidden_dim=4)
        tensors = dict(params.tensors)
        tensors['layer0.W'] = np.zeros_like(tensors['layer0.W'])
        tensors['classifier.b'] = np.array([0.25, -1.5])
        (logits, _) = forward(g, ModelParams(ARCH_GCN, tensors))
        npt.assert_array_equal(logits, [0.25, -1.5])

    def test_single_node(self):
        g = Graph(np.zeros((1, 1), dtype=bool), np.array([[1.0, -2.0, 0.5]]),
                  0)
        params = random_params(3, ARCH_GCN, num_layers=1)
        h = np.maximum(g.features.dot(params['layer0.W']), 0.0)[0]
        expected = h.dot(params['classifier.W']) + params['classifier.b']
        npt.assert_allclose(forward(g, params)[0], expected, rtol=1e-12)

    def test_purity(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng, 6)
        for arch in ARCHS:
            params = random_params(1, arch)
            before = params.copy()
            adjacency = g.adjacency.copy()
            (a, _) = forward(g, params)
            (b, _) = forward(g, params)
            npt.assert_array_equal(a, b)
            self.assertTrue(params.equals(before))
            npt.assert_array_equal(g.adjacency, adjacency)

    def test_feature_mismatch(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng, 4, feature_dim=5)
        with self.assertRaises(ContractViolation):
            forward(g, init_params(ARCH_GIN, 3, 2))


class TestCrossEntropy(unittest.TestCase):

    def test_uniform(self):
        for k in (2, 3, 7):
            self.assertAlmostEqual(cross_entropy(np.zeros(k), 0), np.log(k))

    def test_saturated(self):
        self.assertEqual(cross_entropy(np.array([1000.0, 0.0]), 0), 0.0)
        self.assertAlmostEqual(cross_entropy(np.array([1000.0, 0.0]), 1),
                               1000.0)

    def test_value(self):
        self.assertAlmostEqual(cross_entropy(np.array([1.0, 2.0, 3.0]), 2),
                               0.40760596, places=7)

    def test_errors(self):
        with self.assertRaises(ContractViolation):
            cross_entropy(np.array([np.nan, 0.0]), 0)
        with self.assertRaises(ContractViolation):
            cross_entropy(np.array([0.0, 0.0]), 2)


class TestBackward(unittest.TestCase):

    def test_adjacency_matches_fd(self):
        for arch in ARCHS:
            for (g, params) in smooth_instances(arch, 10, seed=1):
                (_, cache) = forward(g, params)
                grads = backward(g, params, cache, g.label)
                fd = fd_grad_adjacency(g, params, g.label)
                self.assertLessEqual(max_rel_err(grads.grad_adjacency, fd),
                                     1e-4)

    def test_params_match_fd(self):
        for arch in ARCHS:
            for (g, params) in smooth_instances(arch, 10, seed=2):
                (_, cache) = forward(g, params)
                grads = backward(g, params, cache, g.label)
                fd = fd_grad_params(g, params, g.label)
                for name in params.names():
                    self.assertLessEqual(
                        max_rel_err(grads.grad_params[name], fd[name]), 1e-4,
                        '%s %s' % (arch, name))

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(9)
        for arch in ARCHS:
            g = random_graph(rng, 7)
            params = random_params(4, arch)
            (_, cache) = forward(g, params)
            d = backward(g, params, cache, g.label).grad_adjacency
            npt.assert_array_equal(d, d.T)
            npt.assert_array_equal(d.diagonal(), np.zeros(7))

    def test_dead_first_layer(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 5)
        params = random_params(2, ARCH_GCN)
        params.tensors['layer0.W'][:] = 0.0
        (_, cache) = forward(g, params)
        grads = backward(g, params, cache, g.label)
        npt.assert_array_equal(grads.grad_adjacency, np.zeros((5, 5)))

    def test_path_closed_form(self):
        # path 0-1-2, one layer, identity weight, positive features:
        # every ReLU is active and the loss is a closed form of the
        # weight w on pair (0, 1).
        adj = np.zeros((3, 3), dtype=bool)
        adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = True
        x = np.array([1.0, 2.0, 3.0])
        g = Graph(adj, x[:, None], 0)
        params = ModelParams(ARCH_GCN, {
            'layer0.W': np.array([[1.0]]),
            'classifier.W': np.array([[1.0, -1.0]]),
            'classifier.b': np.array([0.0, 0.0])})

        def relaxed(w):
            (d0, d1, d2) = (1.0 + w, 2.0 + w, 2.0)
            rows = [x[0]/d0 + w*x[1]/np.sqrt(d0*d1),
                    w*x[0]/np.sqrt(d0*d1) + x[1]/d1 + x[2]/np.sqrt(d1*d2),
                    x[1]/np.sqrt(d1*d2) + x[2]/d2]
            r = np.mean(rows)
            return np.log(1.0 + np.exp(-2.0*r))

        h = 1e-6
        expected = (relaxed(1.0 + h) - relaxed(1.0 - h)) / (2*h)
        (_, cache) = forward(g, params)
        d = backward(g, params, cache, 0).grad_adjacency
        self.assertAlmostEqual(d[0, 1], expected, places=6)
        self.assertAlmostEqual(loss(g, params), relaxed(1.0), places=12)

    def test_stale_cache(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng, 4)
        other = random_graph(rng, 5)
        params = random_params(0, ARCH_GIN)
        (_, cache) = forward(other, params)
        with self.assertRaises(ContractViolation):
            backward(g, params, cache, g.label)
        (_, cache) = forward(g, params)
        with self.assertRaises(ContractViolation):
            backward(g, params, cache, 5)


class TestModelParams(unittest.TestCase):

    def test_init_deterministic(self):
        for arch in ARCHS:
            a = init_params(arch, 4, 3, hidden_dim=8, seed=7)
            b = init_params(arch, 4, 3, hidden_dim=8, seed=7)
            c = init_params(arch, 4, 3, hidden_dim=8, seed=8)
            self.assertTrue(a.equals(b))
            self.assertFalse(a.equals(c))
            self.assertEqual((a.feature_dim, a.hidden_dim, a.num_classes),
                             (4, 8, 3))

    def test_bad_names(self):
        with self.assertRaises(ContractViolation):
            ModelParams(ARCH_GCN, {'layer0.W': np.zeros((2, 2))})
        with self.assertRaises(ContractViolation):
            ModelParams('mlp', {})

    def test_bad_chain(self):
        tensors = dict(init_params(ARCH_GCN, 3, 2, hidden_dim=4).tensors)
        tensors['layer1.W'] = np.zeros((5, 4))
        with self.assertRaises(ContractViolation):
            ModelParams(ARCH_GCN, tensors)

    def test_checkpoint_bit_exact(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.json')
            for arch in ARCHS:
                params = random_params(12, arch)
                save_params(params, path)
                self.assertTrue(load_params(path).equals(params))

    def test_malformed_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.json')
            with open(path, 'w') as fp:
                fp.write('{"arch": "gcn", "tensors": [{"name": "x"}]}\n')
            with self.assertRaises(ContractViolation):
                load_params(path)


if __name__ == '__main__':
    unittest.main()
