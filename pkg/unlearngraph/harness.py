#!/usr/bin/env python

""" Victim training and the clean / poisoned comparison matrix.

Every cell (variant, arch, seed) splits the clean dataset with the
seed, swaps in the variant's copies of the training graphs, trains a
victim and scores it on the untouched clean test graphs.
"""

import csv
import json
import logging

import numpy as np
from sklearn.model_selection import train_test_split

from .graphtypes import ContractViolation
from .graphtypes import DatasetMismatchError
from .graphtypes import StratificationError
from .graphtypes import TrainingDivergence
from .graphtypes import edit_statistics
from .gnn import ARCHS
from .gnn import ARCH_GCN
from .gnn import init_params
from .gnn import forward
from .optim import AdamState
from .optim import train_epoch
from .tudataset import diff_datasets
from .utils import make_rng
from .utils import mean_std
from .utils import ordered_map


VARIANT_CLEAN = 'clean'
VARIANT_EMINS = 'eminS'
VARIANT_RANDOM = 'random'
VARIANT_ERRMAX = 'errmax'


#  TrainConfig
#
class TrainConfig:

    def __init__(self,
                 arch=ARCH_GCN,
                 epochs=200,
                 lr=0.01,
                 seed=0,
                 train_fraction=0.8,
                 hidden_dim=32,
                 num_layers=2):
        self.arch = arch
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.train_fraction = train_fraction
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.validate()
        return

    def __repr__(self):
        return ('<TrainConfig: arch=%s, epochs=%d, lr=%g, seed=%d, '
                'train_fraction=%g>' %
                (self.arch, self.epochs, self.lr, self.seed,
                 self.train_fraction))

    def validate(self):
        if self.arch not in ARCHS:
            raise ContractViolation('Unknown architecture: %r' % self.arch)
        if self.epochs < 1:
            raise ContractViolation('epochs must be at least 1.')
        if not (self.lr > 0):
            raise ContractViolation('lr must be positive: %r' % self.lr)
        if not (0.0 < self.train_fraction < 1.0):
            raise ContractViolation('train_fraction must lie in (0, 1).')
        return

    def replace(self, **kwargs):
        d = dict(vars(self))
        d.update(kwargs)
        return TrainConfig(**d)

    def as_dict(self):
        return dict(vars(self))


# split_indices
def split_indices(labels, train_fraction, seed):
    """Stratified shuffle split of positions. Returns sorted
    (train, test) index lists; every class lands on both sides."""
    if not (0.0 < train_fraction < 1.0):
        raise ContractViolation('train_fraction must lie in (0, 1).')
    labels = np.asarray(labels)
    (classes, counts) = np.unique(labels, return_counts=True)
    for (c, n) in zip(classes.tolist(), counts.tolist()):
        if n < 2:
            raise StratificationError('Class %d has %d graph(s); need 2.' %
                                      (c, n))
    idx = np.arange(len(labels))
    try:
        (train, test) = train_test_split(idx, train_size=train_fraction,
                                         stratify=labels, random_state=seed)
    except ValueError as e:
        raise StratificationError('Cannot stratify %d graph(s) over %d '
                                  'classes: %s' %
                                  (len(labels), len(classes), e))
    for side in (train, test):
        if len(np.unique(labels[side])) < len(classes):
            raise StratificationError('Split at %g leaves a class out.' %
                                      train_fraction)
    return (sorted(train.tolist()), sorted(test.tolist()))


# split_dataset
def split_dataset(dataset, train_fraction, seed):
    (train, test) = split_indices(dataset.labels(), train_fraction, seed)
    return (dataset.subset(train), dataset.subset(test))


#  VictimTrainer
#
class VictimTrainer:

    debug = 0

    def __init__(self, config):
        self.config = config
        self.losses = []
        return

    def __repr__(self):
        return '<VictimTrainer: %r>' % self.config

    def run(self, train_set):
        if len(train_set) == 0:
            raise ContractViolation('Cannot train on an empty dataset.')
        config = self.config
        config.validate()
        params = init_params(config.arch, train_set.feature_dim,
                             train_set.num_classes,
                             hidden_dim=config.hidden_dim,
                             num_layers=config.num_layers, seed=config.seed)
        state = AdamState.for_params(params)
        rng = make_rng(config.seed)
        self.losses = []
        for epoch in range(config.epochs):
            try:
                (params, state, loss) = train_epoch(
                    train_set.graphs, params, state, config.lr, rng)
            except TrainingDivergence as e:
                raise TrainingDivergence(
                    'Victim diverged at epoch %d: %s' % (epoch, e),
                    stage='epoch', index=epoch)
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    'Non-finite loss at epoch %d' % epoch,
                    stage='epoch', index=epoch)
            self.losses.append(loss)
            if self.debug:
                logging.debug('victim: epoch=%d, loss=%.6f' % (epoch, loss))
        return params


# train_victim
def train_victim(train_set, config):
    return VictimTrainer(config).run(train_set)


# evaluate
def predict(graph, params):
    """Argmax class; ties go to the lowest index."""
    return int(np.argmax(forward(graph, params)[0]))


def evaluate(params, test_set):
    """Fraction of test graphs classified correctly."""
    if len(test_set) == 0:
        raise ContractViolation('Cannot evaluate on an empty dataset.')
    hits = sum(1 for g in test_set if predict(g, params) == g.label)
    return hits / len(test_set)


#  EvalReport
#
class EvalReport:

    """Accuracy rows per (variant, arch, seed) with their aggregates."""

    def __init__(self, rows=(), edit_stats=None, config=None):
        self.rows = [(v, a, int(s), float(acc)) for (v, a, s, acc) in rows]
        for row in self.rows:
            if not (0.0 <= row[3] <= 1.0):
                raise ContractViolation('Accuracy outside [0, 1]: %r' %
                                        (row,))
        self.edit_stats = edit_stats or {}
        self.config = config or {}
        return

    def __repr__(self):
        return '<EvalReport: %d rows>' % len(self.rows)

    def variants(self):
        seen = []
        for row in self.rows:
            if row[0] not in seen:
                seen.append(row[0])
        return seen

    def archs(self):
        seen = []
        for row in self.rows:
            if row[1] not in seen:
                seen.append(row[1])
        return seen

    def aggregates(self):
        """{(variant, arch): (mean, population std)} in row order."""
        groups = {}
        for (v, a, _, acc) in self.rows:
            groups.setdefault((v, a), []).append(acc)
        return {k: mean_std(accs) for (k, accs) in groups.items()}

    def ordering_violations(self):
        """Archs where eminS < random < clean does not hold, among the
        variants present."""
        aggs = self.aggregates()
        chain = [VARIANT_EMINS, VARIANT_RANDOM, VARIANT_CLEAN]
        violations = []
        for arch in self.archs():
            means = [(v, aggs[(v, arch)][0]) for v in chain
                     if (v, arch) in aggs]
            for ((v0, m0), (v1, m1)) in zip(means, means[1:]):
                if not (m0 < m1):
                    violations.append(
                        '%s: mean(%s)=%.4f is not below mean(%s)=%.4f' %
                        (arch, v0, m0, v1, m1))
        return violations

    def as_dict(self):
        aggs = self.aggregates()
        return {
            'config': self.config,
            'rows': [{'variant': v, 'arch': a, 'seed': s,
                      'test_accuracy': acc}
                     for (v, a, s, acc) in self.rows],
            'aggregates': [{'variant': v, 'arch': a, 'mean': m, 'std': sd}
                           for ((v, a), (m, sd)) in aggs.items()],
            'edit_stats': self.edit_stats,
            'ordering_violations': self.ordering_violations(),
        }

    @classmethod
    def from_dict(klass, data):
        rows = [(r['variant'], r['arch'], r['seed'], r['test_accuracy'])
                for r in data['rows']]
        return klass(rows, edit_stats=data.get('edit_stats'),
                     config=data.get('config'))

    def save_json(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as fp:
            json.dump(self.as_dict(), fp, indent=2)
            fp.write('\n')
        return

    @classmethod
    def load_json(klass, path):
        with open(path, 'r', encoding='utf-8') as fp:
            return klass.from_dict(json.load(fp))

    def save_csv(self, path):
        with open(path, 'w', encoding='utf-8', newline='') as fp:
            writer = csv.writer(fp, lineterminator='\n')
            writer.writerow(['variant', 'arch', 'seed', 'test_accuracy'])
            for (v, a, s, acc) in self.rows:
                writer.writerow([v, a, s, '%.4f' % acc])
        return

    def format_table(self):
        lines = ['%-12s %-6s %8s %8s %5s' %
                 ('variant', 'arch', 'mean', 'std', 'n')]
        counts = {}
        for (v, a, _, _) in self.rows:
            counts[(v, a)] = counts.get((v, a), 0) + 1
        for ((v, a), (m, sd)) in self.aggregates().items():
            lines.append('%-12s %-6s %8.4f %8.4f %5d' %
                         (v, a, m, sd, counts[(v, a)]))
        for (v, stats) in self.edit_stats.items():
            lines.append('%s: %.2f flips/graph, %.4f of potential edges' %
                         (v, stats['mean_flips_per_graph'],
                          stats['mean_fraction_modified']))
        for violation in self.ordering_violations():
            lines.append('ordering: %s' % violation)
        return '\n'.join(lines) + '\n'


def check_variant(clean, name, variant):
    if len(variant) != len(clean):
        raise DatasetMismatchError('%s: %d graphs, clean has %d' %
                                   (name, len(variant), len(clean)))
    for (i, (a, b)) in enumerate(zip(clean, variant)):
        if a.label != b.label or a.node_count != b.node_count:
            raise DatasetMismatchError(
                '%s: graph %d differs from clean in label or node count' %
                (name, i))
    if variant.feature_dim != clean.feature_dim:
        raise DatasetMismatchError('%s: feature_dim differs from clean' %
                                   name)
    return


# run_experiment
def run_experiment(clean, variants, archs, seeds, train_config, jobs=1):
    """Trains a victim per (variant, arch, seed) and scores it on the
    clean test side. Rows come out in variant, arch, seed order."""
    for (name, variant) in variants.items():
        check_variant(clean, name, variant)
    labels = clean.labels()
    splits = {s: split_indices(labels, train_config.train_fraction, s)
              for s in seeds}
    cells = [(name, arch, seed) for name in variants for arch in archs
             for seed in seeds]

    def run_cell(cell):
        (name, arch, seed) = cell
        (train_idx, test_idx) = splits[seed]
        train_set = variants[name].subset(train_idx)
        test_set = clean.subset(test_idx)
        config = train_config.replace(arch=arch, seed=seed)
        params = train_victim(train_set, config)
        acc = evaluate(params, test_set)
        logging.info('cell: variant=%s, arch=%s, seed=%d, acc=%.4f' %
                     (name, arch, seed, acc))
        return (name, arch, seed, acc)

    rows = ordered_map(run_cell, cells, jobs=jobs)
    edit_stats = {}
    for (name, variant) in variants.items():
        if variant is not clean:
            editlog = diff_datasets(clean, variant)
            edit_stats[name] = edit_statistics(clean, editlog)
    config = train_config.as_dict()
    config.update({'archs': list(archs), 'seeds': list(seeds),
                   'variants': list(variants), 'dataset': clean.name})
    return EvalReport(rows, edit_stats=edit_stats, config=config)
