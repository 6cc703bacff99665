#!/usr/bin/env python

""" Error-minimizing structural noise.

A surrogate GNN and the per-graph edge flips are optimized in turn,
both toward a lower training loss: the surrogate is trained on the
currently perturbed graphs, then every graph's flips are recrafted from
its clean version by greedy gradient steps on the adjacency matrix.
Models trained on the result find nothing left to learn.

Random flips and error-maximizing flips (greedy loss ascent against a
surrogate trained on clean data) are provided as baselines.
"""

import logging

import numpy as np

from .graphtypes import ADD
from .graphtypes import DELETE
from .graphtypes import Flip
from .graphtypes import EditLog
from .graphtypes import PerturbationBudget
from .graphtypes import ContractViolation
from .graphtypes import TrainingDivergence
from .graphtypes import apply_flips
from .graphtypes import resolve_budget
from .graphtypes import edit_statistics
from .gnn import ARCHS
from .gnn import ARCH_GCN
from .gnn import init_params
from .gnn import forward
from .gnn import backward
from .optim import AdamState
from .optim import train_epoch
from .optim import mean_loss
from .utils import is_symmetric
from .utils import make_rng
from .utils import num_pairs
from .utils import ordered_map
from .utils import upper_pairs


METHOD_EMINS = 'eminS'
METHOD_RANDOM = 'random'
METHOD_ERRMAX = 'errmax'
METHODS = (METHOD_EMINS, METHOD_RANDOM, METHOD_ERRMAX)


#  PoisonConfig
#
class PoisonConfig:

    def __init__(self,
                 outer_iters=10,
                 inner_steps=5,
                 lr=0.01,
                 stop_loss=0.1,
                 budget=None,
                 seed=0,
                 grad_refresh_every=1,
                 arch=ARCH_GCN,
                 hidden_dim=32,
                 num_layers=2,
                 reinit_surrogate=False,
                 jobs=1):
        self.outer_iters = outer_iters
        self.inner_steps = inner_steps
        self.lr = lr
        self.stop_loss = stop_loss
        self.budget = budget if budget is not None else PerturbationBudget()
        self.seed = seed
        self.grad_refresh_every = grad_refresh_every
        self.arch = arch
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.reinit_surrogate = reinit_surrogate
        self.jobs = jobs
        self.validate()
        return

    def __repr__(self):
        return ('<PoisonConfig: T=%d, M=%d, lr=%g, rho=%g, %r, seed=%d, '
                'refresh=%d, arch=%s>' %
                (self.outer_iters, self.inner_steps, self.lr, self.stop_loss,
                 self.budget, self.seed, self.grad_refresh_every, self.arch))

    def validate(self):
        if self.outer_iters < 1 or self.inner_steps < 1:
            raise ContractViolation('T and M must be at least 1.')
        if not (self.lr > 0):
            raise ContractViolation('lr must be positive: %r' % self.lr)
        if not (self.stop_loss >= 0):
            raise ContractViolation('rho must be nonnegative: %r' %
                                    self.stop_loss)
        if self.grad_refresh_every < 1:
            raise ContractViolation('grad_refresh_every must be >= 1.')
        if self.arch not in ARCHS:
            raise ContractViolation('Unknown architecture: %r' % self.arch)
        if self.jobs < 1:
            raise ContractViolation('jobs must be >= 1.')
        self.budget.validate()
        return

    def with_budget(self, budget):
        d = dict(vars(self))
        d['budget'] = budget
        return PoisonConfig(**d)

    def as_dict(self):
        d = {'T': self.outer_iters, 'M': self.inner_steps, 'lr': self.lr,
             'rho': self.stop_loss, 'seed': self.seed,
             'grad_refresh_every': self.grad_refresh_every,
             'arch': self.arch, 'hidden_dim': self.hidden_dim,
             'num_layers': self.num_layers,
             'reinit_surrogate': self.reinit_surrogate}
        d.update(self.budget.as_dict())
        return d


# select_flips
def select_flips(grad_adj, adjacency, c, exclude=None, maximize=False):
    """Greedy choice of up to c admissible flips.

    Descending (error-minimizing) admits deleting an edge with a
    positive gradient or adding a pair with a negative one; ascending
    reverses both signs. Zero gradients are never admissible.
    Candidates rank by |grad| descending, ties by (u, v).
    exclude is an optional boolean matrix of pairs to skip.
    """
    grad_adj = np.asarray(grad_adj, dtype=np.float64)
    adjacency = np.asarray(adjacency, dtype=bool)
    if grad_adj.shape != adjacency.shape or \
            not is_symmetric(grad_adj) or not is_symmetric(adjacency):
        raise ContractViolation('select_flips needs equal-sized symmetric '
                                'square matrices.')
    if c < 0:
        raise ContractViolation('Budget must be nonnegative: %r' % c)
    if c == 0:
        return []
    (us, vs) = upper_pairs(adjacency.shape[0])
    g = grad_adj[us, vs]
    present = adjacency[us, vs]
    if maximize:
        admissible = (present & (g < 0)) | (~present & (g > 0))
    else:
        admissible = (present & (g > 0)) | (~present & (g < 0))
    if exclude is not None:
        admissible &= ~np.asarray(exclude, dtype=bool)[us, vs]
    candidates = np.flatnonzero(admissible)
    # pairs are already lexicographic; a stable sort keeps ties that way
    order = np.argsort(-np.abs(g[candidates]), kind='stable')
    picked = candidates[order[:c]]
    return [Flip(us[k], vs[k], DELETE if present[k] else ADD, g[k])
            for k in picked.tolist()]


# craft_noise_for_graph
def craft_noise_for_graph(graph, params, c, grad_refresh_every=1,
                          maximize=False):
    """Greedily flips up to c pairs of the clean graph under a frozen
    model, recomputing the adjacency gradient every grad_refresh_every
    flips. Stops early once no pair is admissible."""
    if c < 0:
        raise ContractViolation('Budget must be nonnegative: %r' % c)
    flips = []
    n = graph.node_count
    flipped = np.zeros((n, n), dtype=bool)
    current = graph
    while len(flips) < c:
        (_, cache) = forward(current, params)
        grads = backward(current, params, cache, current.label)
        if not grads.is_finite():
            raise TrainingDivergence(
                'Non-finite adjacency gradient after %d flip(s)' % len(flips),
                stage='craft', index=len(flips))
        take = min(grad_refresh_every, c - len(flips))
        batch = select_flips(grads.grad_adjacency, current.adjacency, take,
                             exclude=flipped, maximize=maximize)
        if not batch:
            break
        current = apply_flips(current, batch)
        for f in batch:
            flipped[f.u, f.v] = flipped[f.v, f.u] = True
        flips.extend(batch)
    return flips


#  Poisoner
#
class Poisoner:

    """Alternates surrogate training and per-graph noise refresh.

    Attributes set by run():
      budgets: resolved flip budget per graph.
      history: (outer iteration, training loss, loss after refresh).
      iterations: outer iterations actually performed.
    """

    debug = 0

    def __init__(self, config, maximize=False, train_on_clean=False):
        self.config = config
        self.maximize = maximize
        self.train_on_clean = train_on_clean
        self.budgets = []
        self.history = []
        self.iterations = 0
        self.params = None
        return

    def __repr__(self):
        return '<Poisoner: %r, maximize=%r>' % (self.config, self.maximize)

    def _surrogate(self, dataset, t):
        config = self.config
        return init_params(config.arch, dataset.feature_dim,
                           dataset.num_classes, hidden_dim=config.hidden_dim,
                           num_layers=config.num_layers, seed=config.seed + t)

    def _refresh(self, clean, params):
        config = self.config

        def craft(i):
            graph = clean[i]
            flips = craft_noise_for_graph(graph, params, self.budgets[i],
                                          config.grad_refresh_every,
                                          maximize=self.maximize)
            if self.debug:
                logging.debug('refresh: graph=%d, budget=%d, flips=%d' %
                              (i, self.budgets[i], len(flips)))
            return flips

        return ordered_map(craft, range(len(clean)), jobs=config.jobs)

    def run(self, dataset):
        if len(dataset) == 0:
            raise ContractViolation('Cannot poison an empty dataset.')
        config = self.config
        clean = dataset.graphs
        self.budgets = [resolve_budget(g, config.budget) for g in clean]
        self.history = []
        rng = make_rng(config.seed)
        params = self._surrogate(dataset, 0)
        state = AdamState.for_params(params)
        perturbed = list(clean)
        flips = [[] for _ in clean]
        for t in range(config.outer_iters):
            if t and config.reinit_surrogate:
                params = self._surrogate(dataset, t)
                state = AdamState.for_params(params)
            train_set = clean if self.train_on_clean else perturbed
            try:
                for _ in range(config.inner_steps):
                    (params, state, train_loss) = train_epoch(
                        train_set, params, state, config.lr, rng)
                flips = self._refresh(clean, params)
                perturbed = [apply_flips(g, f) if f else g
                             for (g, f) in zip(clean, flips)]
                stop_set = clean if self.train_on_clean else perturbed
                loss = mean_loss(stop_set, params)
            except TrainingDivergence as e:
                raise TrainingDivergence(
                    'Training diverged at outer iteration %d: %s' % (t, e),
                    stage='outer', index=t)
            self.history.append((t, train_loss, loss))
            self.iterations = t + 1
            logging.info('poison: iter=%d, train_loss=%.6f, loss=%.6f, '
                         'flips=%d' % (t, train_loss, loss,
                                       sum(len(f) for f in flips)))
            if loss < config.stop_loss:
                break
        self.params = params
        editlog = EditLog()
        for (i, f) in enumerate(flips):
            editlog.extend(i, f)
        return (dataset.replace_graphs(perturbed), editlog)


# poison_dataset
def poison_dataset(dataset, config):
    """Error-minimizing structural noise. Returns (poisoned, editlog)."""
    return Poisoner(config).run(dataset)


# error_max_noise
def error_max_noise(dataset, budget, config):
    """Greedy loss-ascent flips against a surrogate trained on clean data."""
    poisoner = Poisoner(config.with_budget(budget), maximize=True,
                        train_on_clean=True)
    return poisoner.run(dataset)


# random_noise
def random_noise(dataset, budget, seed):
    """Flips min(c, #pairs) distinct pairs per graph, uniformly at random."""
    if len(dataset) == 0:
        raise ContractViolation('Cannot poison an empty dataset.')
    rng = make_rng(seed)
    editlog = EditLog()
    graphs = []
    for (i, graph) in enumerate(dataset):
        npairs = num_pairs(graph.node_count)
        k = min(resolve_budget(graph, budget), npairs)
        if k == 0:
            graphs.append(graph)
            continue
        (us, vs) = upper_pairs(graph.node_count)
        picked = np.sort(rng.choice(npairs, size=k, replace=False))
        flips = [Flip(us[j], vs[j],
                      DELETE if graph.adjacency[us[j], vs[j]] else ADD)
                 for j in picked.tolist()]
        editlog.extend(i, flips)
        graphs.append(apply_flips(graph, flips))
    return (dataset.replace_graphs(graphs), editlog)


# build_manifest
def build_manifest(method, dataset, budget, editlog, config=None, argv=None,
                   extra=None):
    """The JSON-ready record of one poisoning run."""
    budgets = [resolve_budget(g, budget) for g in dataset]
    stats = edit_statistics(dataset, editlog)
    manifest = {'dataset': dataset.name,
                'method': method,
                'r_V': budget.r_v,
                'r_E': budget.r_e}
    if config is not None:
        manifest.update(config.as_dict())
        manifest.update(budget.as_dict())
    manifest['budgets'] = budgets
    manifest['total_flips'] = stats['total_flips']
    manifest['mean_flips_per_graph'] = stats['mean_flips_per_graph']
    manifest['mean_fraction_modified'] = stats['mean_fraction_modified']
    if extra:
        manifest.update(extra)
    if argv is not None:
        manifest['argv'] = list(argv)
    return manifest
