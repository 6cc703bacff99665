"""Graph, model and TU-file fixtures shared by the tests."""
import os

import numpy as np

from unlearngraph.graphtypes import Graph
from unlearngraph.graphtypes import GraphDataset
from unlearngraph.graphtypes import FEATURES_DEGREE
from unlearngraph.gnn import init_params
from unlearngraph.gnn import forward
from unlearngraph.gnn import ModelParams
from unlearngraph.tudataset import degree_features


def random_adjacency(rng, n, p=0.4):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return upper | upper.T


def random_graph(rng, n, feature_dim=3, num_classes=2, p=0.4):
    return Graph(random_adjacency(rng, n, p),
                 rng.normal(size=(n, feature_dim)),
                 int(rng.integers(num_classes)))


def random_params(seed, arch, feature_dim=3, num_classes=2, hidden_dim=4,
                  num_layers=2):
    """Initialized params with nonzero biases and eps, so every tensor
    carries gradient."""
    params = init_params(arch, feature_dim, num_classes,
                         hidden_dim=hidden_dim, num_layers=num_layers,
                         seed=seed)
    rng = np.random.default_rng(seed + 1000)
    tensors = {}
    for (k, v) in params.tensors.items():
        if k.endswith('.W') or k.endswith('.W1') or k.endswith('.W2'):
            tensors[k] = v
        else:
            tensors[k] = rng.normal(scale=0.3, size=v.shape)
    return ModelParams(arch, tensors)


def kink_margin(graph, params):
    """Smallest |pre-activation| feeding a ReLU in the forward pass."""
    (_, cache) = forward(graph, params)
    margins = [np.inf]
    for step in cache.steps:
        for z in (step[1:2] if params.arch == 'gcn' else (step[1], step[3])):
            if z.size:
                margins.append(np.abs(z).min())
    return float(min(margins))


def degree_graph(adjacency, label, max_degree=8):
    adjacency = np.asarray(adjacency, dtype=bool)
    return Graph(adjacency, degree_features(adjacency, max_degree), label)


def toy_dataset(seed=0, count=20, max_degree=8, name='TOY'):
    """Two classes of random graphs: sparse (label 0) and dense (label 1),
    6 to 9 nodes, one-hot degree features."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(count):
        label = i % 2
        n = int(rng.integers(6, 10))
        adj = random_adjacency(rng, n, 0.2 if label == 0 else 0.8)
        graphs.append(degree_graph(adj, label, max_degree))
    return GraphDataset(graphs, 2, max_degree+1, name,
                        feature_kind=FEATURES_DEGREE)


def empty_clique_dataset(count=20, n=6, max_degree=8, name='CLIQUES'):
    """Empty graphs (label 0) against cliques (label 1), all on n nodes,
    one-hot degree features."""
    empty = np.zeros((n, n), dtype=bool)
    clique = ~np.eye(n, dtype=bool)
    graphs = [degree_graph(clique if i % 2 else empty, i % 2, max_degree)
              for i in range(count)]
    return GraphDataset(graphs, 2, max_degree+1, name,
                        feature_kind=FEATURES_DEGREE)


def write_tu(directory, name, edges, indicator, labels, node_labels=None):
    """Writes raw TU files; edges are (i, j) 1-based pairs."""
    os.makedirs(directory, exist_ok=True)

    def put(suffix, lines):
        with open(os.path.join(directory, name + suffix), 'w') as fp:
            for line in lines:
                fp.write('%s\n' % line)

    put('_A.txt', ['%d, %d' % e for e in edges])
    put('_graph_indicator.txt', indicator)
    put('_graph_labels.txt', labels)
    if node_labels is not None:
        put('_node_labels.txt', node_labels)
    return


def write_mutag_style(directory, name='MUTAG'):
    """Two graphs: graph 1 is the path 1-2-3, graph 2 the edge 4-5.
    Node labels 0/1/2, graph labels 1/-1."""
    write_tu(directory, name,
             [(1, 2), (2, 1), (2, 3), (3, 2), (4, 5), (5, 4)],
             [1, 1, 1, 2, 2],
             [1, -1],
             node_labels=[0, 1, 0, 2, 1])
    return


def write_toy_tu(directory, seed=0, count=20, name='TOY'):
    """Saves toy_dataset as TU files through raw edges and labels only."""
    dataset = toy_dataset(seed=seed, count=count)
    edges = []
    indicator = []
    offset = 0
    for (g, graph) in enumerate(dataset, 1):
        for (u, v) in graph.edges():
            edges.append((offset+u+1, offset+v+1))
            edges.append((offset+v+1, offset+u+1))
        indicator.extend([g] * graph.node_count)
        offset += graph.node_count
    write_tu(directory, name, edges, indicator,
             [graph.label for graph in dataset])
    return dataset
