#!/usr/bin/env python
import numpy as np

from .graphtypes import ContractViolation
from .graphtypes import TrainingDivergence
from .gnn import ModelParams
from .gnn import forward
from .gnn import backward
from .gnn import cross_entropy


BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


#  AdamState
#
class AdamState:

    """First and second moment estimates per tensor, plus the step count."""

    def __init__(self, m=None, v=None, t=0):
        self.m = m or {}
        self.v = v or {}
        self.t = t
        return

    def __repr__(self):
        return '<AdamState: t=%d, tensors=%d>' % (self.t, len(self.m))

    @classmethod
    def for_params(klass, params):
        return klass({k: np.zeros_like(x) for (k, x) in params.tensors.items()},
                     {k: np.zeros_like(x) for (k, x) in params.tensors.items()})


# update_params
def update_params(params, grads, state, lr):
    """One Adam step. Returns (new params, new state); inputs are not
    modified."""
    if lr < 0:
        raise ContractViolation('Learning rate must be nonnegative: %r' % lr)
    if state is None or not state.m:
        state = AdamState.for_params(params)
    grad_params = grads.grad_params if hasattr(grads, 'grad_params') \
        else grads
    if not grad_params.is_finite():
        raise TrainingDivergence('Non-finite gradient at Adam step %d' %
                                 (state.t+1), stage='step', index=state.t+1)
    t = state.t + 1
    tensors = {}
    m_new = {}
    v_new = {}
    for (k, x) in params.tensors.items():
        g = grad_params[k]
        m = BETA1 * state.m[k] + (1.0 - BETA1) * g
        v = BETA2 * state.v[k] + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1**t)
        v_hat = v / (1.0 - BETA2**t)
        tensors[k] = x - lr * m_hat / (np.sqrt(v_hat) + EPSILON)
        m_new[k] = m
        v_new[k] = v
    return (ModelParams(params.arch, tensors), AdamState(m_new, v_new, t))


# train_epoch
def train_epoch(graphs, params, state, lr, rng):
    """One pass of per-graph Adam steps over graphs in an order drawn
    from rng. Returns (params, state, mean loss before each step)."""
    total = 0.0
    order = rng.permutation(len(graphs))
    for i in order.tolist():
        graph = graphs[i]
        (logits, cache) = forward(graph, params)
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergence('Non-finite logits on graph %d' % i,
                                     stage='graph', index=i)
        total += cross_entropy(logits, graph.label)
        grads = backward(graph, params, cache, graph.label)
        (params, state) = update_params(params, grads, state, lr)
    return (params, state, total / max(len(graphs), 1))


def mean_loss(graphs, params):
    """Mean cross-entropy of a frozen model over graphs."""
    if len(graphs) == 0:
        return 0.0
    total = 0.0
    for (i, graph) in enumerate(graphs):
        logits = forward(graph, params)[0]
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergence('Non-finite logits on graph %d' % i,
                                     stage='graph', index=i)
        total += cross_entropy(logits, graph.label)
    return total / len(graphs)
