#!/usr/bin/env python
import logging

import numpy as np

from .utils import num_pairs
from .utils import floor_count
from .utils import upper_pairs


# Graph Exceptions
##
class GraphException(Exception):
    pass


class GraphFormatError(GraphException):
    pass


class GraphParseError(GraphFormatError):
    pass


class GraphInconsistencyError(GraphException):
    pass


class ContractViolation(GraphException):
    pass


class TrainingDivergence(GraphException):

    def __init__(self, msg, stage=None, index=None):
        GraphException.__init__(self, msg)
        self.stage = stage
        self.index = index
        return


class StratificationError(GraphException):
    pass


class DatasetMismatchError(GraphException):
    pass


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# Graph
##
class Graph:

    """One graph classification instance.

    Attributes:
      adjacency: a dense symmetric boolean matrix with a false diagonal.
      features: a float64 matrix with one row per node.
      label: the class index.
      node_labels: raw integer node labels when the source had them.

    Arrays are read-only; operations return new graphs.
    """

    def __init__(self, adjacency, features, label, node_labels=None):
        adjacency = np.asarray(adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise ContractViolation(
                'Adjacency must be square: %r' % (adjacency.shape,))
        adjacency = adjacency.astype(bool)
        if not np.array_equal(adjacency, adjacency.T):
            raise ContractViolation('Adjacency is not symmetric.')
        if adjacency.diagonal().any():
            raise ContractViolation('Adjacency has self-loops.')
        n = adjacency.shape[0]
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != n:
            raise ContractViolation(
                'Features shape %r does not match %d nodes.' %
                (features.shape, n))
        if not np.all(np.isfinite(features)):
            raise ContractViolation('Features contain non-finite values.')
        if node_labels is not None:
            node_labels = np.asarray(node_labels, dtype=np.int64)
            if node_labels.shape != (n,):
                raise ContractViolation(
                    'Node labels shape %r does not match %d nodes.' %
                    (node_labels.shape, n))
            node_labels = _frozen(node_labels)
        self.adjacency = _frozen(adjacency)
        self.features = features if not features.flags.writeable \
            else _frozen(features)
        self.label = int(label)
        self.node_labels = node_labels
        return

    def __repr__(self):
        return '<Graph: nodes=%d, edges=%d, label=%d>' % \
            (self.node_count, self.num_edges, self.label)

    @property
    def node_count(self):
        return self.adjacency.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        return int(np.count_nonzero(self.adjacency)) // 2

    @property
    def num_pairs(self):
        return num_pairs(self.node_count)

    def edges(self):
        """Returns the undirected edges (u, v), u < v, in lexicographic
        order."""
        (us, vs) = upper_pairs(self.node_count)
        mask = self.adjacency[us, vs]
        return list(zip(us[mask].tolist(), vs[mask].tolist()))

    def degrees(self):
        return self.adjacency.sum(axis=1)

    def with_adjacency(self, adjacency):
        return Graph(adjacency, self.features, self.label,
                     node_labels=self.node_labels)

    def same_as(self, other):
        return (self.label == other.label and
                np.array_equal(self.adjacency, other.adjacency) and
                np.array_equal(self.features, other.features))


# GraphDataset
##
FEATURES_NODE_LABELS = 'node_labels'
FEATURES_ATTRIBUTES = 'attributes'
FEATURES_DEGREE = 'degree'


class GraphDataset:

    """An ordered list of graphs sharing classes and feature layout.

    label_values maps a class index back to the raw label found on disk;
    node_label_values does the same for one-hot node-label features.
    """

    def __init__(self, graphs, num_classes, feature_dim, name,
                 label_values=None, node_label_values=None,
                 feature_kind=FEATURES_ATTRIBUTES):
        self.graphs = list(graphs)
        self.num_classes = int(num_classes)
        self.feature_dim = int(feature_dim)
        self.name = name
        if label_values is None:
            label_values = list(range(self.num_classes))
        self.label_values = [int(x) for x in label_values]
        if node_label_values is not None:
            node_label_values = [int(x) for x in node_label_values]
        self.node_label_values = node_label_values
        self.feature_kind = feature_kind
        self.validate()
        return

    def __repr__(self):
        return '<GraphDataset: %s, graphs=%d, classes=%d, features=%d>' % \
            (self.name, len(self.graphs), self.num_classes, self.feature_dim)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    def validate(self):
        if self.graphs and self.num_classes <= 0:
            raise ContractViolation('num_classes must be positive.')
        if len(self.label_values) != self.num_classes:
            raise ContractViolation(
                'label_values has %d entries for %d classes.' %
                (len(self.label_values), self.num_classes))
        for (i, g) in enumerate(self.graphs):
            if not (0 <= g.label < self.num_classes):
                raise ContractViolation(
                    'Graph %d: label %d outside [0, %d).' %
                    (i, g.label, self.num_classes))
            if g.feature_dim != self.feature_dim:
                raise ContractViolation(
                    'Graph %d: feature_dim %d, expected %d.' %
                    (i, g.feature_dim, self.feature_dim))
        return

    def labels(self):
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def replace_graphs(self, graphs):
        """Returns a dataset with the same metadata and other graphs."""
        return GraphDataset(graphs, self.num_classes, self.feature_dim,
                            self.name, label_values=self.label_values,
                            node_label_values=self.node_label_values,
                            feature_kind=self.feature_kind)

    def subset(self, indices):
        return self.replace_graphs([self.graphs[i] for i in indices])


# PerturbationBudget
##
class PerturbationBudget:

    """Flip ratios against the potential edge space (r_V) and
    against the existing edges (r_E)."""

    def __init__(self, r_v=0.05, r_e=0.2):
        self.r_v = float(r_v)
        self.r_e = float(r_e)
        self.validate()
        return

    def __repr__(self):
        return '<PerturbationBudget: r_V=%g, r_E=%g>' % (self.r_v, self.r_e)

    def validate(self):
        if not (0.0 <= self.r_v <= 1.0):
            raise ContractViolation('r_V must lie in [0, 1]: %r' % self.r_v)
        if not (self.r_e >= 0.0):
            raise ContractViolation('r_E must be nonnegative: %r' % self.r_e)
        return

    def as_dict(self):
        return {'r_V': self.r_v, 'r_E': self.r_e}


# resolve_budget
def resolve_budget(graph, budget):
    """Returns c = min(floor(r_V * n(n-1)/2), floor(r_E * |E|))."""
    by_pairs = floor_count(budget.r_v * graph.num_pairs)
    by_edges = floor_count(budget.r_e * graph.num_edges)
    return min(by_pairs, by_edges)


# Flip
##
ADD = 'add'
DELETE = 'delete'


class Flip:

    """One edge modification on the pair (u, v), u < v."""

    def __init__(self, u, v, op, grad=0.0):
        u = int(u)
        v = int(v)
        if u >= v or u < 0:
            raise ContractViolation('Flip requires 0 <= u < v: (%d, %d)' %
                                    (u, v))
        if op not in (ADD, DELETE):
            raise ContractViolation('Unknown flip op: %r' % op)
        self.u = u
        self.v = v
        self.op = op
        self.grad = float(grad)
        return

    def __repr__(self):
        return '<Flip: %s(%d,%d) grad=%.6g>' % \
            (self.op.upper(), self.u, self.v, self.grad)

    def __eq__(self, other):
        return (isinstance(other, Flip) and
                (self.u, self.v, self.op, self.grad) ==
                (other.u, other.v, other.op, other.grad))

    def __hash__(self):
        return hash((self.u, self.v, self.op, self.grad))

    @property
    def pair(self):
        return (self.u, self.v)

    def inverse(self):
        op = DELETE if self.op == ADD else ADD
        return Flip(self.u, self.v, op, self.grad)


# apply_flips
def apply_flips(graph, flips):
    """Returns a new graph with every flip applied in list order.

    A DELETE must hit an existing edge and an ADD an absent pair,
    taking earlier flips in the list into account.
    """
    n = graph.node_count
    adjacency = np.array(graph.adjacency, copy=True)
    for f in flips:
        if f.v >= n:
            raise GraphInconsistencyError(
                'Pair (%d, %d) outside a %d-node graph.' % (f.u, f.v, n))
        present = adjacency[f.u, f.v]
        if f.op == DELETE and not present:
            raise GraphInconsistencyError(
                'DELETE of absent edge (%d, %d).' % (f.u, f.v))
        if f.op == ADD and present:
            raise GraphInconsistencyError(
                'ADD of present edge (%d, %d).' % (f.u, f.v))
        adjacency[f.u, f.v] = adjacency[f.v, f.u] = not present
    return graph.with_adjacency(adjacency)


def invert_flips(flips):
    """The flips that undo `flips`: ops swapped, order reversed."""
    return [f.inverse() for f in reversed(flips)]


# EditLog
##
class EditLog:

    """Ordered (graph_index, Flip) entries; a pair appears at most once
    per graph."""

    debug = 0

    def __init__(self, entries=()):
        self.entries = []
        self._seen = set()
        for (i, f) in entries:
            self.add(i, f)
        return

    def __repr__(self):
        return '<EditLog: %d entries>' % len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, EditLog) and self.entries == other.entries

    def add(self, graph_index, flip):
        key = (int(graph_index), flip.u, flip.v)
        if key in self._seen:
            raise GraphInconsistencyError(
                'Pair (%d, %d) already edited in graph %d.' %
                (flip.u, flip.v, graph_index))
        self._seen.add(key)
        self.entries.append((int(graph_index), flip))
        if self.debug:
            logging.debug('editlog: graph=%d, %r' % (graph_index, flip))
        return

    def extend(self, graph_index, flips):
        for f in flips:
            self.add(graph_index, f)
        return

    def flips_for(self, graph_index):
        return [f for (i, f) in self.entries if i == graph_index]

    def counts(self, num_graphs):
        counts = [0] * num_graphs
        for (i, _) in self.entries:
            counts[i] += 1
        return counts

    def pairs(self):
        """The set of (graph_index, u, v) keys."""
        return set(self._seen)


# edit_statistics
def edit_statistics(dataset, editlog):
    """Mean flips per graph and mean fraction of potential edges modified."""
    if len(dataset) == 0:
        return {'mean_flips_per_graph': 0.0,
                'mean_fraction_modified': 0.0,
                'total_flips': 0}
    counts = editlog.counts(len(dataset))
    fractions = []
    for (g, k) in zip(dataset, counts):
        p = g.num_pairs
        fractions.append(k / p if p else 0.0)
    return {'mean_flips_per_graph': float(np.mean(counts)),
            'mean_fraction_modified': float(np.mean(fractions)),
            'total_flips': int(sum(counts))}
