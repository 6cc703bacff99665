#!/usr/bin/env python

""" Dense GCN / GIN graph classifiers with an analytic backward pass.

Both architectures read a graph as (A, X), stack message-passing
layers, mean-pool the node rows and apply a linear classifier.
The backward pass returns gradients for every parameter and for every
entry of the raw adjacency A, including the path through the GCN
normalization D^-1/2 (A + I) D^-1/2.

All arithmetic is float64.
"""

import json
import logging

import numpy as np

from .graphtypes import ContractViolation
from .utils import make_rng
from .utils import symmetrize_pairs
from .utils import upper_pairs


ARCH_GCN = 'gcn'
ARCH_GIN = 'gin'
ARCHS = (ARCH_GCN, ARCH_GIN)

CLASSIFIER_W = 'classifier.W'
CLASSIFIER_B = 'classifier.b'


def _layer_names(arch, l):
    if arch == ARCH_GCN:
        return ['layer%d.W' % l]
    return ['layer%d.%s' % (l, k) for k in ('W1', 'b1', 'W2', 'b2', 'eps')]


# ModelParams
##
class ModelParams:

    """Named float64 tensors of a GCN or GIN classifier.

    GCN layer l holds `layerl.W`. GIN layer l holds its MLP
    `layerl.W1`, `layerl.b1`, `layerl.W2`, `layerl.b2` and the scalar
    `layerl.eps`. Both end with `classifier.W` and `classifier.b`.
    """

    def __init__(self, arch, tensors):
        if arch not in ARCHS:
            raise ContractViolation('Unknown architecture: %r' % arch)
        self.arch = arch
        self.tensors = {k: np.asarray(v, dtype=np.float64)
                        for (k, v) in tensors.items()}
        self.num_layers = 0
        while ('layer%d.W' % self.num_layers) in self.tensors or \
                ('layer%d.W1' % self.num_layers) in self.tensors:
            self.num_layers += 1
        expected = []
        for l in range(self.num_layers):
            expected.extend(_layer_names(arch, l))
        expected.extend([CLASSIFIER_W, CLASSIFIER_B])
        if sorted(expected) != sorted(self.tensors):
            raise ContractViolation('Tensor names %r do not describe a %s.' %
                                    (sorted(self.tensors), arch))
        self._check_shapes()
        return

    def __repr__(self):
        return '<ModelParams: %s, layers=%d, %d->%d->%d>' % \
            (self.arch, self.num_layers, self.feature_dim, self.hidden_dim,
             self.num_classes)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def _check_shapes(self):
        dim = None
        for l in range(self.num_layers):
            if self.arch == ARCH_GCN:
                w = self.tensors['layer%d.W' % l]
                chain = [w]
            else:
                (w1, b1, w2, b2, eps) = [self.tensors[k]
                                         for k in _layer_names(self.arch, l)]
                if w1.ndim != 2 or w2.ndim != 2 or \
                        b1.shape != (w1.shape[1],) or \
                        b2.shape != (w2.shape[1],) or eps.shape != () or \
                        w1.shape[1] != w2.shape[0]:
                    raise ContractViolation('Layer %d: bad GIN shapes' % l)
                chain = [w1, w2]
            for w in chain:
                if w.ndim != 2:
                    raise ContractViolation('Layer %d: weight not 2-d' % l)
            if dim is not None and chain[0].shape[0] != dim:
                raise ContractViolation('Layer %d: input %d, expected %d' %
                                        (l, chain[0].shape[0], dim))
            dim = chain[-1].shape[1]
        w = self.tensors[CLASSIFIER_W]
        b = self.tensors[CLASSIFIER_B]
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ContractViolation('Bad classifier shapes')
        if dim is not None and w.shape[0] != dim:
            raise ContractViolation('Classifier input %d, expected %d' %
                                    (w.shape[0], dim))
        return

    @property
    def feature_dim(self):
        if self.num_layers == 0:
            return self.tensors[CLASSIFIER_W].shape[0]
        first = 'layer0.W' if self.arch == ARCH_GCN else 'layer0.W1'
        return self.tensors[first].shape[0]

    @property
    def hidden_dim(self):
        return self.tensors[CLASSIFIER_W].shape[0]

    @property
    def num_classes(self):
        return self.tensors[CLASSIFIER_B].shape[0]

    @property
    def layer_weights(self):
        names = []
        for l in range(self.num_layers):
            names.extend(_layer_names(self.arch, l))
        return [self.tensors[k] for k in names]

    @property
    def classifier_weight(self):
        return self.tensors[CLASSIFIER_W]

    @property
    def classifier_bias(self):
        return self.tensors[CLASSIFIER_B]

    def copy(self):
        return ModelParams(self.arch,
                           {k: v.copy() for (k, v) in self.tensors.items()})

    def zeros_like(self):
        return ModelParams(self.arch,
                           {k: np.zeros_like(v)
                            for (k, v) in self.tensors.items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def equals(self, other):
        return (self.arch == other.arch and
                self.names() == other.names() and
                all(np.array_equal(self.tensors[k], other.tensors[k])
                    for k in self.tensors))


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# init_params
def init_params(arch, feature_dim, num_classes, hidden_dim=32, num_layers=2,
                seed=0):
    """Glorot-uniform weights, zero biases and eps, from a seeded
    generator."""
    if arch not in ARCHS:
        raise ContractViolation('Unknown architecture: %r' % arch)
    if num_layers < 1 or hidden_dim < 1:
        raise ContractViolation('Need at least one layer and hidden unit.')
    rng = make_rng(seed)
    tensors = {}
    dim = feature_dim
    for l in range(num_layers):
        if arch == ARCH_GCN:
            tensors['layer%d.W' % l] = glorot_uniform(rng, dim, hidden_dim)
        else:
            tensors['layer%d.W1' % l] = glorot_uniform(rng, dim, hidden_dim)
            tensors['layer%d.b1' % l] = np.zeros(hidden_dim)
            tensors['layer%d.W2' % l] = glorot_uniform(rng, hidden_dim,
                                                       hidden_dim)
            tensors['layer%d.b2' % l] = np.zeros(hidden_dim)
            tensors['layer%d.eps' % l] = np.zeros(())
        dim = hidden_dim
    tensors[CLASSIFIER_W] = glorot_uniform(rng, dim, num_classes)
    tensors[CLASSIFIER_B] = np.zeros(num_classes)
    return ModelParams(arch, tensors)


# normalize_adjacency
def _normalize(adjacency):
    n = adjacency.shape[0]
    a_tilde = adjacency + np.eye(n)
    s = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return (s[:, None] * a_tilde * s[None, :], a_tilde, s)


def normalize_adjacency(adjacency):
    """Returns D^-1/2 (A + I) D^-1/2, D the degree matrix of A + I."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    return _normalize(adjacency)[0]


def _normalize_backward(d_a_hat, a_tilde, s):
    """Pulls dL/dA_hat back to dL/dA through the normalization."""
    direct = d_a_hat * s[:, None] * s[None, :]
    g = d_a_hat * a_tilde
    ds = g.dot(s) + g.T.dot(s)
    dd = -0.5 * ds * s**3
    return direct + dd[:, None]


def _relu(x):
    return np.maximum(x, 0.0)


# ForwardCache
##
class ForwardCache:

    """Intermediate values of one forward pass.

    layer_inputs[l] is H^l. For GCN, steps[l] = (A_hat H^l, Z^l); for
    GIN, steps[l] = (U^l, Z1^l, Q^l, Z2^l) where U^l = (1+eps)H^l + A H^l,
    Q^l = ReLU(Z1^l) and H^{l+1} = ReLU(Z2^l).
    """

    def __init__(self, arch, adjacency):
        self.arch = arch
        self.adjacency = adjacency
        self.a_hat = None
        self.a_tilde = None
        self.scale = None
        self.layer_inputs = []
        self.steps = []
        self.output = None
        self.readout = None
        self.logits = None
        return

    def __repr__(self):
        return '<ForwardCache: %s, nodes=%d, layers=%d>' % \
            (self.arch, self.node_count, len(self.steps))

    @property
    def node_count(self):
        return self.adjacency.shape[0]


def _forward(adjacency, features, params):
    cache = ForwardCache(params.arch, adjacency)
    n = adjacency.shape[0]
    h = features
    if params.arch == ARCH_GCN:
        (cache.a_hat, cache.a_tilde, cache.scale) = _normalize(adjacency)
    for l in range(params.num_layers):
        cache.layer_inputs.append(h)
        if params.arch == ARCH_GCN:
            p = cache.a_hat.dot(h)
            z = p.dot(params['layer%d.W' % l])
            cache.steps.append((p, z))
            h = _relu(z)
        else:
            (w1, b1, w2, b2, eps) = [params[k]
                                     for k in _layer_names(ARCH_GIN, l)]
            u = (1.0 + eps) * h + adjacency.dot(h)
            z1 = u.dot(w1) + b1
            q = _relu(z1)
            z2 = q.dot(w2) + b2
            cache.steps.append((u, z1, q, z2))
            h = _relu(z2)
    cache.output = h
    cache.readout = h.sum(axis=0) / max(n, 1)
    cache.logits = cache.readout.dot(params[CLASSIFIER_W]) + \
        params[CLASSIFIER_B]
    return (cache.logits, cache)


# forward
def forward(graph, params):
    """Returns (logits, cache) of params on graph."""
    if graph.feature_dim != params.feature_dim:
        raise ContractViolation('Graph has %d features, model expects %d.' %
                                (graph.feature_dim, params.feature_dim))
    adjacency = graph.adjacency.astype(np.float64)
    return _forward(adjacency, graph.features, params)


# cross_entropy
def _log_softmax(logits):
    m = logits.max()
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum())


def cross_entropy(logits, label):
    """Returns -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ContractViolation('Non-finite logits: %r' % (logits,))
    if not (0 <= label < logits.shape[0]):
        raise ContractViolation('Label %d outside %d classes.' %
                                (label, logits.shape[0]))
    return float(max(-_log_softmax(logits)[label], 0.0))


def loss(graph, params):
    return cross_entropy(forward(graph, params)[0], graph.label)


# Gradients
##
class Gradients:

    def __init__(self, grad_params, grad_adjacency):
        self.grad_params = grad_params
        self.grad_adjacency = grad_adjacency
        return

    def __repr__(self):
        return '<Gradients: %s, nodes=%d>' % \
            (self.grad_params.arch, self.grad_adjacency.shape[0])

    def is_finite(self):
        return self.grad_params.is_finite() and \
            bool(np.all(np.isfinite(self.grad_adjacency)))


def _backward(cache, params, label):
    """Returns (grad tensors, dL/dA on the raw, unsymmetrized A)."""
    n = cache.node_count
    logits = cache.logits
    p = np.exp(_log_softmax(logits))
    d_logits = p.copy()
    d_logits[label] -= 1.0
    grads = {CLASSIFIER_W: np.outer(cache.readout, d_logits),
             CLASSIFIER_B: d_logits}
    d_readout = params[CLASSIFIER_W].dot(d_logits)
    d_h = np.tile(d_readout / max(n, 1), (n, 1))
    d_adj = np.zeros((n, n))
    d_a_hat = np.zeros((n, n))
    for l in reversed(range(params.num_layers)):
        h = cache.layer_inputs[l]
        if params.arch == ARCH_GCN:
            (p_l, z) = cache.steps[l]
            w = params['layer%d.W' % l]
            d_z = d_h * (z > 0)
            grads['layer%d.W' % l] = p_l.T.dot(d_z)
            d_p = d_z.dot(w.T)
            d_a_hat += d_p.dot(h.T)
            d_h = cache.a_hat.T.dot(d_p)
        else:
            (u, z1, q, z2) = cache.steps[l]
            (w1, b1, w2, b2, eps) = [params[k]
                                     for k in _layer_names(ARCH_GIN, l)]
            d_z2 = d_h * (z2 > 0)
            grads['layer%d.W2' % l] = q.T.dot(d_z2)
            grads['layer%d.b2' % l] = d_z2.sum(axis=0)
            d_z1 = d_z2.dot(w2.T) * (z1 > 0)
            grads['layer%d.W1' % l] = u.T.dot(d_z1)
            grads['layer%d.b1' % l] = d_z1.sum(axis=0)
            d_u = d_z1.dot(w1.T)
            grads['layer%d.eps' % l] = np.array((d_u * h).sum())
            d_adj += d_u.dot(h.T)
            d_h = (1.0 + eps) * d_u + cache.adjacency.T.dot(d_u)
    if params.arch == ARCH_GCN:
        d_adj += _normalize_backward(d_a_hat, cache.a_tilde, cache.scale)
    ordered = {k: grads[k] for k in params.names()}
    return (ordered, d_adj)


# backward
def backward(graph, params, cache, label):
    """Returns exact gradients of cross_entropy(forward(graph)) with
    respect to params and to the adjacency.

    grad_adjacency is per undirected pair: g[u][v] + g[v][u], zero
    diagonal.
    """
    if cache.arch != params.arch or \
            cache.node_count != graph.node_count or \
            len(cache.layer_inputs) != params.num_layers or \
            cache.logits is None or \
            cache.logits.shape != (params.num_classes,) or \
            (cache.layer_inputs and
             cache.layer_inputs[0].shape != graph.features.shape):
        raise ContractViolation('Stale forward cache for %r' % (graph,))
    if not (0 <= label < params.num_classes):
        raise ContractViolation('Label %d outside %d classes.' %
                                (label, params.num_classes))
    (grads, d_adj) = _backward(cache, params, label)
    return Gradients(ModelParams(params.arch, grads),
                     symmetrize_pairs(d_adj))


def _relaxed_loss(adjacency, features, params, label):
    return cross_entropy(_forward(adjacency, features, params)[0], label)


# fd_grad_adjacency
def fd_grad_adjacency(graph, params, label, h=1e-4):
    """Central finite differences of the loss along each symmetric pair
    (both mirror entries moved together) of a real-relaxed A."""
    if h <= 0:
        raise ContractViolation('h must be positive: %r' % h)
    n = graph.node_count
    adjacency = graph.adjacency.astype(np.float64)
    result = np.zeros((n, n))
    (us, vs) = upper_pairs(n)
    for (u, v) in zip(us.tolist(), vs.tolist()):
        a = adjacency.copy()
        a[u, v] += h
        a[v, u] += h
        plus = _relaxed_loss(a, graph.features, params, label)
        a[u, v] -= 2*h
        a[v, u] -= 2*h
        minus = _relaxed_loss(a, graph.features, params, label)
        result[u, v] = result[v, u] = (plus - minus) / (2*h)
    return result


# fd_grad_params
def fd_grad_params(graph, params, label, h=1e-4):
    """Central finite differences of the loss for every parameter entry."""
    if h <= 0:
        raise ContractViolation('h must be positive: %r' % h)
    adjacency = graph.adjacency.astype(np.float64)
    result = {}
    for name in params.names():
        nudged = params.copy()
        t = nudged.tensors[name]
        g = np.zeros_like(t)
        for idx in np.ndindex(*t.shape):
            x = t[idx]
            t[idx] = x + h
            plus = _relaxed_loss(adjacency, graph.features, nudged, label)
            t[idx] = x - h
            minus = _relaxed_loss(adjacency, graph.features, nudged, label)
            t[idx] = x
            g[idx] = (plus - minus) / (2*h)
        result[name] = g
    return ModelParams(params.arch, result)


# Checkpoints
##
def save_params(params, path):
    """Writes params as JSON: arch, then each tensor's name, shape and
    row-major values. Floats are stored with repr, which reloads
    bit-exactly."""
    data = {'arch': params.arch,
            'tensors': [{'name': k,
                         'shape': list(v.shape),
                         'data': [float(x) for x in v.ravel(order='C')]}
                        for (k, v) in params.tensors.items()]}
    with open(path, 'w', encoding='utf-8', newline='\n') as fp:
        json.dump(data, fp)
        fp.write('\n')
    logging.info('checkpoint saved: %r -> %r' % (params, path))
    return


def load_params(path):
    with open(path, 'r', encoding='utf-8') as fp:
        data = json.load(fp)
    try:
        tensors = {t['name']: np.array(t['data'], dtype=np.float64)
                   .reshape(t['shape'])
                   for t in data['tensors']}
        return ModelParams(data['arch'], tensors)
    except (KeyError, TypeError, ValueError) as e:
        raise ContractViolation('Malformed checkpoint %s: %s' % (path, e))
