#!/usr/bin/env python

""" TU flat-file dataset support.

A TU dataset NAME is a directory of plain text files:

  NAME_A.txt                one directed edge "i, j" per line, 1-based
                            global node ids, both directions listed
  NAME_graph_indicator.txt  line i holds the 1-based graph id of node i
  NAME_graph_labels.txt     line g holds the integer label of graph g
  NAME_node_labels.txt      (optional) line i holds node i's integer label
  NAME_node_attributes.txt  (optional) line i holds node i's comma-separated
                            real attributes

Edit logs travel next to the dataset as CSV, and run manifests as JSON.
"""

import os
import os.path
import csv
import json
import logging

import numpy as np

from .graphtypes import Graph
from .graphtypes import GraphDataset
from .graphtypes import EditLog
from .graphtypes import Flip
from .graphtypes import ADD
from .graphtypes import DELETE
from .graphtypes import FEATURES_NODE_LABELS
from .graphtypes import FEATURES_ATTRIBUTES
from .graphtypes import FEATURES_DEGREE
from .graphtypes import GraphFormatError
from .graphtypes import GraphParseError
from .graphtypes import DatasetMismatchError
from .utils import fmt_grad
from .utils import upper_pairs


MAX_DEGREE = 64

SUFFIX_A = '_A.txt'
SUFFIX_GRAPH_INDICATOR = '_graph_indicator.txt'
SUFFIX_GRAPH_LABELS = '_graph_labels.txt'
SUFFIX_NODE_LABELS = '_node_labels.txt'
SUFFIX_NODE_ATTRIBUTES = '_node_attributes.txt'

EDITLOG_HEADER = ['graph_index', 'u', 'v', 'op', 'grad']


#  TUReader
#
class TUReader:

    """Reads the numeric lines of one TU file, keeping line numbers
    for diagnostics."""

    def __init__(self, path):
        self.path = path
        self.fname = os.path.basename(path)
        return

    def __repr__(self):
        return '<TUReader: %s>' % self.fname

    def lines(self):
        """Yields (lineno, tokens) for every non-blank line."""
        try:
            fp = open(self.path, 'r', encoding='utf-8')
        except FileNotFoundError:
            raise GraphFormatError('Missing file: %s' % self.fname)
        with fp:
            for (i, line) in enumerate(fp, 1):
                line = line.strip()
                if not line:
                    continue
                yield (i, [t.strip() for t in line.split(',')])
        return

    def _int(self, lineno, token):
        try:
            return int(token)
        except ValueError:
            raise GraphParseError('%s:%d: not an integer: %r' %
                                  (self.fname, lineno, token))

    def _float(self, lineno, token):
        try:
            return float(token)
        except ValueError:
            raise GraphParseError('%s:%d: not a number: %r' %
                                  (self.fname, lineno, token))

    def read_ints(self):
        values = []
        for (lineno, tokens) in self.lines():
            if len(tokens) != 1:
                raise GraphFormatError('%s:%d: expected one value' %
                                       (self.fname, lineno))
            values.append(self._int(lineno, tokens[0]))
        return values

    def read_pairs(self):
        pairs = []
        for (lineno, tokens) in self.lines():
            if len(tokens) != 2:
                raise GraphFormatError('%s:%d: expected "i, j"' %
                                       (self.fname, lineno))
            pairs.append((lineno, self._int(lineno, tokens[0]),
                          self._int(lineno, tokens[1])))
        return pairs

    def read_rows(self):
        return [[self._float(lineno, t) for t in tokens]
                for (lineno, tokens) in self.lines()]


# find_tu_name
def find_tu_name(directory):
    """Returns NAME for the single NAME_graph_indicator.txt in directory."""
    names = sorted(f[:-len(SUFFIX_GRAPH_INDICATOR)]
                   for f in os.listdir(directory)
                   if f.endswith(SUFFIX_GRAPH_INDICATOR))
    if len(names) != 1:
        raise GraphFormatError('Cannot infer dataset name in %s: %r' %
                               (directory, names))
    return names[0]


def _path(directory, name, suffix):
    return os.path.join(directory, name + suffix)


def degree_features(adjacency, max_degree=MAX_DEGREE):
    """One-hot node degree, degrees above max_degree share the last bucket."""
    degrees = np.minimum(adjacency.sum(axis=1), max_degree)
    features = np.zeros((adjacency.shape[0], max_degree+1), dtype=np.float64)
    features[np.arange(adjacency.shape[0]), degrees] = 1.0
    return features


def one_hot(values, vocabulary):
    index = {v: i for (i, v) in enumerate(vocabulary)}
    features = np.zeros((len(values), len(vocabulary)), dtype=np.float64)
    for (row, v) in enumerate(values):
        features[row, index[v]] = 1.0
    return features


# load_tu_dataset
def load_tu_dataset(directory, name=None, max_degree=MAX_DEGREE):
    """Loads a TU dataset into a GraphDataset.

    Node labels become one-hot features; otherwise node attributes are
    used verbatim; otherwise one-hot degree capped at max_degree.
    Graph labels are remapped to contiguous 0-based class indices.
    """
    if name is None:
        name = find_tu_name(directory)
    logging.info('loading: %r from %r' % (name, directory))
    indicator = TUReader(_path(directory, name, SUFFIX_GRAPH_INDICATOR))
    graph_ids = indicator.read_ints()
    raw_labels = TUReader(
        _path(directory, name, SUFFIX_GRAPH_LABELS)).read_ints()
    edge_lines = TUReader(_path(directory, name, SUFFIX_A)).read_pairs()
    num_graphs = len(raw_labels)
    num_nodes = len(graph_ids)

    # global node -> (graph, local index)
    local = np.zeros(num_nodes, dtype=np.int64)
    sizes = [0] * num_graphs
    for (i, gid) in enumerate(graph_ids):
        if not (1 <= gid <= num_graphs):
            raise GraphFormatError(
                '%s:%d: node refers to nonexistent graph %d' %
                (indicator.fname, i+1, gid))
        local[i] = sizes[gid-1]
        sizes[gid-1] += 1
    adjacencies = [np.zeros((k, k), dtype=bool) for k in sizes]

    fname = name + SUFFIX_A
    seen = set()
    for (lineno, i, j) in edge_lines:
        for x in (i, j):
            if not (1 <= x <= num_nodes):
                raise GraphFormatError(
                    '%s:%d: node %d refers to a nonexistent graph' %
                    (fname, lineno, x))
        if i == j:
            raise GraphFormatError('%s:%d: self-loop on node %d' %
                                   (fname, lineno, i))
        gi = graph_ids[i-1]
        if gi != graph_ids[j-1]:
            raise GraphFormatError('%s:%d: edge (%d, %d) crosses graphs' %
                                   (fname, lineno, i, j))
        if (i, j) in seen:
            raise GraphFormatError('%s:%d: repeated edge (%d, %d)' %
                                   (fname, lineno, i, j))
        seen.add((i, j))
        (u, v) = (local[i-1], local[j-1])
        adj = adjacencies[gi-1]
        adj[u, v] = adj[v, u] = True

    label_values = sorted(set(raw_labels))
    label_index = {v: k for (k, v) in enumerate(label_values)}

    node_label_values = None
    node_labels_path = _path(directory, name, SUFFIX_NODE_LABELS)
    attributes_path = _path(directory, name, SUFFIX_NODE_ATTRIBUTES)
    if os.path.exists(node_labels_path):
        reader = TUReader(node_labels_path)
        node_labels = reader.read_ints()
        if len(node_labels) != num_nodes:
            raise GraphFormatError('%s: %d node labels for %d nodes' %
                                   (reader.fname, len(node_labels),
                                    num_nodes))
        node_label_values = sorted(set(node_labels))
        all_features = one_hot(node_labels, node_label_values)
        feature_kind = FEATURES_NODE_LABELS
        feature_dim = len(node_label_values)
    elif os.path.exists(attributes_path):
        reader = TUReader(attributes_path)
        rows = reader.read_rows()
        if len(rows) != num_nodes:
            raise GraphFormatError('%s: %d attribute rows for %d nodes' %
                                   (reader.fname, len(rows), num_nodes))
        widths = set(len(r) for r in rows)
        if len(widths) > 1:
            raise GraphFormatError('%s: ragged attribute rows' %
                                   reader.fname)
        feature_dim = widths.pop() if widths else 1
        all_features = np.array(rows, dtype=np.float64).reshape(
            num_nodes, feature_dim)
        node_labels = None
        feature_kind = FEATURES_ATTRIBUTES
    else:
        all_features = None
        node_labels = None
        feature_kind = FEATURES_DEGREE
        feature_dim = max_degree + 1

    graphs = []
    start = 0
    order = np.argsort(np.asarray(graph_ids, dtype=np.int64), kind='stable')
    for (g, k) in enumerate(sizes):
        nodes = order[start:start+k]
        start += k
        adj = adjacencies[g]
        if all_features is None:
            features = degree_features(adj, max_degree)
        else:
            features = all_features[nodes]
        nl = None
        if node_labels is not None:
            nl = [node_labels[i] for i in nodes]
        graphs.append(Graph(adj, features, label_index[raw_labels[g]],
                            node_labels=nl))
    dataset = GraphDataset(graphs, len(label_values), feature_dim, name,
                           label_values=label_values,
                           node_label_values=node_label_values,
                           feature_kind=feature_kind)
    logging.info('loaded: %r' % dataset)
    return dataset


def _write_lines(path, lines):
    with open(path, 'w', encoding='utf-8', newline='\n') as fp:
        for line in lines:
            fp.write(line)
            fp.write('\n')
    return


# save_tu_dataset
def save_tu_dataset(dataset, directory):
    """Writes dataset in TU format under directory.

    Raw graph and node label values are written back. Node attributes
    are written for every dataset not built from node labels, so
    features reload bit-exactly.
    """
    os.makedirs(directory, exist_ok=True)
    name = dataset.name
    edges = []
    indicator = []
    labels = []
    node_labels = []
    attributes = []
    offset = 0
    for (g, graph) in enumerate(dataset, 1):
        n = graph.node_count
        for u in range(n):
            for v in np.flatnonzero(graph.adjacency[u]).tolist():
                edges.append('%d, %d' % (offset+u+1, offset+v+1))
        indicator.extend(['%d' % g] * n)
        labels.append('%d' % dataset.label_values[graph.label])
        if dataset.feature_kind == FEATURES_NODE_LABELS:
            node_labels.extend('%d' % x for x in graph.node_labels)
        else:
            attributes.extend(', '.join(repr(float(x)) for x in row)
                              for row in graph.features)
        offset += n
    _write_lines(_path(directory, name, SUFFIX_A), edges)
    _write_lines(_path(directory, name, SUFFIX_GRAPH_INDICATOR), indicator)
    _write_lines(_path(directory, name, SUFFIX_GRAPH_LABELS), labels)
    if dataset.feature_kind == FEATURES_NODE_LABELS:
        _write_lines(_path(directory, name, SUFFIX_NODE_LABELS), node_labels)
    else:
        _write_lines(_path(directory, name, SUFFIX_NODE_ATTRIBUTES),
                     attributes)
    logging.info('saved: %r to %r' % (dataset, directory))
    return


# Edit logs
##
def save_edit_log(editlog, path):
    with open(path, 'w', encoding='utf-8', newline='') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(EDITLOG_HEADER)
        for (i, f) in editlog:
            writer.writerow([i, f.u, f.v, f.op, fmt_grad(f.grad)])
    return


def load_edit_log(path):
    fname = os.path.basename(path)
    editlog = EditLog()
    with open(path, 'r', encoding='utf-8', newline='') as fp:
        reader = csv.reader(fp)
        for (lineno, row) in enumerate(reader, 1):
            if lineno == 1 and row == EDITLOG_HEADER:
                continue
            if len(row) != 5 or row[3] not in (ADD, DELETE):
                raise GraphFormatError('%s:%d: malformed edit row' %
                                       (fname, lineno))
            try:
                (i, u, v) = (int(row[0]), int(row[1]), int(row[2]))
                grad = float(row[4])
            except ValueError:
                raise GraphParseError('%s:%d: malformed number' %
                                      (fname, lineno))
            editlog.add(i, Flip(u, v, row[3], grad))
    return editlog


# diff_datasets
def diff_datasets(clean, poisoned):
    """Recovers the edits that turn clean into poisoned.

    Flips come out per graph in lexicographic pair order with grad 0.
    """
    if len(clean) != len(poisoned):
        raise DatasetMismatchError('Graph counts differ: %d vs %d' %
                                   (len(clean), len(poisoned)))
    editlog = EditLog()
    for (i, (a, b)) in enumerate(zip(clean, poisoned)):
        if a.node_count != b.node_count:
            raise DatasetMismatchError('Graph %d: node counts differ' % i)
        (us, vs) = upper_pairs(a.node_count)
        before = a.adjacency[us, vs]
        after = b.adjacency[us, vs]
        for k in np.flatnonzero(before != after).tolist():
            op = DELETE if before[k] else ADD
            editlog.add(i, Flip(us[k], vs[k], op))
    return editlog


# Manifests
##
def save_manifest(manifest, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as fp:
        json.dump(manifest, fp, indent=2)
        fp.write('\n')
    return


def load_manifest(path):
    with open(path, 'r', encoding='utf-8') as fp:
        return json.load(fp)
