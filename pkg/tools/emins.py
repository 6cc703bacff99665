#!/usr/bin/env python
"""
Makes a graph classification dataset unlearnable and measures the damage.

  emins.py poison      --data DIR --out DIR [--method eminS|random|errmax]
  emins.py train       --data DIR --out DIR [--arch gcn|gin]
  emins.py eval        --model FILE --data DIR
  emins.py experiment  --clean DIR --variant NAME=DIR ... --report FILE
  emins.py inspect     --clean DIR --poisoned DIR [--edits FILE]
  emins.py replay      MANIFEST --out DIR

Exit codes: 0 success, 1 bad flags, 2 dataset failure, 3 divergence.
"""
import argparse
import logging
import os
import os.path
import sys

from unlearngraph.graphtypes import PerturbationBudget
from unlearngraph.graphtypes import GraphException
from unlearngraph.graphtypes import ContractViolation
from unlearngraph.graphtypes import DatasetMismatchError
from unlearngraph.graphtypes import TrainingDivergence
from unlearngraph.graphtypes import EditLog
from unlearngraph.graphtypes import edit_statistics
from unlearngraph.tudataset import MAX_DEGREE
from unlearngraph.tudataset import find_tu_name
from unlearngraph.tudataset import load_tu_dataset
from unlearngraph.tudataset import save_tu_dataset
from unlearngraph.tudataset import save_edit_log
from unlearngraph.tudataset import load_edit_log
from unlearngraph.tudataset import diff_datasets
from unlearngraph.tudataset import save_manifest
from unlearngraph.tudataset import load_manifest
from unlearngraph.gnn import ARCHS
from unlearngraph.gnn import save_params
from unlearngraph.gnn import load_params
from unlearngraph.poison import METHODS
from unlearngraph.poison import METHOD_EMINS
from unlearngraph.poison import METHOD_RANDOM
from unlearngraph.poison import PoisonConfig
from unlearngraph.poison import Poisoner
from unlearngraph.poison import random_noise
from unlearngraph.poison import build_manifest
from unlearngraph.harness import TrainConfig
from unlearngraph.harness import VictimTrainer
from unlearngraph.harness import VARIANT_CLEAN
from unlearngraph.harness import split_indices
from unlearngraph.harness import evaluate
from unlearngraph.harness import run_experiment


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATASET = 2
EXIT_DIVERGENCE = 3

EDITS_FILE = 'edits.csv'
MANIFEST_FILE = 'manifest.json'
MODEL_FILE = 'model.json'


class UsageError(Exception):
    pass


class DatasetLoadError(Exception):
    pass


class CliParser(argparse.ArgumentParser):

    """Reports bad flags as UsageError instead of exiting with 2.
    Long flags must be spelled out in full."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault('allow_abbrev', False)
        argparse.ArgumentParser.__init__(self, *args, **kwargs)
        return

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError('%s: error: %s' % (self.prog, message))


def _load(directory, name, max_degree):
    try:
        if name is None:
            name = find_tu_name(directory)
        return load_tu_dataset(directory, name, max_degree=max_degree)
    except (GraphException, OSError) as e:
        raise DatasetLoadError('%s: %s' % (directory, e))


OUTPUT_FLAGS = ('out', 'report', 'debug')


def _flags(args):
    """Effective flag values, output locations left out."""
    return {k: v for (k, v) in sorted(vars(args).items())
            if k != 'func' and k not in OUTPUT_FLAGS}


def _echo_argv(raw_args):
    """raw_args without --out/--report and their values."""
    argv = []
    skip = False
    for token in raw_args:
        if skip:
            skip = False
            continue
        if token in ('--out', '--report'):
            skip = True
            continue
        if token.startswith(('--out=', '--report=')):
            continue
        argv.append(token)
    return argv


def _add_dataset_flags(p, data_flag='--data'):
    p.add_argument(data_flag, required=True, metavar='DIR')
    p.add_argument('--name', help='dataset NAME (inferred when omitted)')
    p.add_argument('--max-degree', type=int, default=MAX_DEGREE)
    return


def _add_model_flags(p):
    p.add_argument('--arch', choices=ARCHS, default='gcn')
    p.add_argument('--hidden', type=int, default=32)
    p.add_argument('--layers', type=int, default=2)
    return


# poison
def cmd_poison(args, raw_args):
    dataset = _load(args.data, args.name, args.max_degree)
    budget = PerturbationBudget(args.rv, args.re)
    config = PoisonConfig(outer_iters=args.outer_iters,
                          inner_steps=args.inner_steps,
                          lr=args.lr,
                          stop_loss=args.stop_loss,
                          budget=budget,
                          seed=args.seed,
                          grad_refresh_every=args.grad_refresh_every,
                          arch=args.arch,
                          hidden_dim=args.hidden,
                          num_layers=args.layers,
                          reinit_surrogate=args.reinit_surrogate,
                          jobs=args.jobs)
    extra = {}
    if args.method == METHOD_RANDOM:
        (poisoned, editlog) = random_noise(dataset, budget, args.seed)
        manifest_config = None
        extra['seed'] = args.seed
    else:
        poisoner = Poisoner(config, maximize=(args.method != METHOD_EMINS),
                            train_on_clean=(args.method != METHOD_EMINS))
        (poisoned, editlog) = poisoner.run(dataset)
        manifest_config = config
        extra['outer_iters_run'] = poisoner.iterations
        extra['history'] = [{'iter': t, 'train_loss': a, 'loss': b}
                            for (t, a, b) in poisoner.history]
    os.makedirs(args.out, exist_ok=True)
    save_tu_dataset(poisoned, args.out)
    save_edit_log(editlog, os.path.join(args.out, EDITS_FILE))
    extra['inputs'] = {'data': args.data, 'name': dataset.name}
    extra['flags'] = _flags(args)
    manifest = build_manifest(args.method, dataset, budget, editlog,
                              config=manifest_config,
                              argv=_echo_argv(raw_args),
                              extra=extra)
    save_manifest(manifest, os.path.join(args.out, MANIFEST_FILE))
    print('%s: %d graphs, %d flips, %.4f of potential edges modified' %
          (args.method, len(dataset), manifest['total_flips'],
           manifest['mean_fraction_modified']))
    return EXIT_OK


# train
def cmd_train(args, raw_args):
    dataset = _load(args.data, args.name, args.max_degree)
    config = TrainConfig(arch=args.arch, epochs=args.epochs, lr=args.lr,
                         seed=args.seed, train_fraction=args.train_fraction,
                         hidden_dim=args.hidden, num_layers=args.layers)
    if args.full:
        train_idx = list(range(len(dataset)))
    else:
        (train_idx, _) = split_indices(dataset.labels(),
                                       config.train_fraction, config.seed)
    trainer = VictimTrainer(config)
    params = trainer.run(dataset.subset(train_idx))
    os.makedirs(args.out, exist_ok=True)
    save_params(params, os.path.join(args.out, MODEL_FILE))
    manifest = {'dataset': dataset.name,
                'inputs': {'data': args.data, 'name': dataset.name},
                'train': config.as_dict(),
                'train_indices': train_idx,
                'final_loss': trainer.losses[-1],
                'flags': _flags(args),
                'argv': _echo_argv(raw_args)}
    save_manifest(manifest, os.path.join(args.out, MANIFEST_FILE))
    print('trained %s on %d graphs, final loss %.4f' %
          (config.arch, len(train_idx), trainer.losses[-1]))
    return EXIT_OK


# eval
def cmd_eval(args, raw_args):
    dataset = _load(args.data, args.name, args.max_degree)
    try:
        params = load_params(args.model)
    except (GraphException, OSError, ValueError) as e:
        raise DatasetLoadError('%s: %s' % (args.model, e))
    if args.all:
        test_set = dataset
    else:
        (_, test_idx) = split_indices(dataset.labels(), args.train_fraction,
                                      args.seed)
        test_set = dataset.subset(test_idx)
    acc = evaluate(params, test_set)
    print('accuracy %.4f on %d graphs' % (acc, len(test_set)))
    return EXIT_OK


def _parse_variant(value):
    (name, sep, directory) = value.partition('=')
    if not sep or not name or not directory:
        raise UsageError('--variant expects NAME=DIR, got %r' % value)
    return (name, directory)


def _csv_path(path):
    (root, ext) = os.path.splitext(path)
    return root + '.csv'


# experiment
def cmd_experiment(args, raw_args):
    clean = _load(args.clean, args.name, args.max_degree)
    variants = {VARIANT_CLEAN: clean}
    for value in args.variant:
        (name, directory) = _parse_variant(value)
        if name in variants:
            raise UsageError('Duplicate variant: %r' % name)
        variants[name] = _load(directory, clean.name, args.max_degree)
    archs = [a.strip() for a in args.archs.split(',') if a.strip()]
    for a in archs:
        if a not in ARCHS:
            raise UsageError('Unknown architecture: %r' % a)
    if args.seeds < 1:
        raise UsageError('--seeds must be at least 1')
    config = TrainConfig(epochs=args.epochs, lr=args.lr,
                         train_fraction=args.train_fraction,
                         hidden_dim=args.hidden, num_layers=args.layers)
    report = run_experiment(clean, variants, archs, list(range(args.seeds)),
                            config, jobs=args.jobs)
    report.config['flags'] = _flags(args)
    report.config['argv'] = _echo_argv(raw_args)
    report.save_json(args.report)
    report.save_csv(_csv_path(args.report))
    sys.stdout.write(report.format_table())
    return EXIT_OK


# inspect
def cmd_inspect(args, raw_args):
    clean = _load(args.clean, args.name, args.max_degree)
    poisoned = _load(args.poisoned, clean.name, args.max_degree)
    editlog = diff_datasets(clean, poisoned)
    counts = editlog.counts(len(clean))
    out = sys.stdout
    out.write('%6s %6s %8s %8s %6s %6s %9s\n' %
              ('graph', 'nodes', 'edges', 'edges*', 'added', 'deleted',
               'fraction'))
    for (i, (a, b)) in enumerate(zip(clean, poisoned)):
        flips = editlog.flips_for(i)
        added = sum(1 for f in flips if f.op == 'add')
        pairs = a.num_pairs
        out.write('%6d %6d %8d %8d %6d %6d %9.4f\n' %
                  (i, a.node_count, a.num_edges, b.num_edges, added,
                   counts[i] - added, counts[i] / pairs if pairs else 0.0))
    stats = edit_statistics(clean, editlog)
    out.write('total: %d flips, %.2f per graph, %.4f of potential edges\n' %
              (stats['total_flips'], stats['mean_flips_per_graph'],
               stats['mean_fraction_modified']))
    if args.edits:
        try:
            logged = load_edit_log(args.edits)
        except (GraphException, OSError) as e:
            raise DatasetLoadError('%s: %s' % (args.edits, e))
        same = logged.pairs() == editlog.pairs()
        out.write('edit log consistent: %s\n' % ('yes' if same else 'no'))
        if not same:
            return EXIT_DATASET
    return EXIT_OK


# replay
def cmd_replay(args, raw_args):
    try:
        manifest = load_manifest(args.manifest)
        if 'argv' in manifest:
            argv = manifest['argv']
        else:
            # experiment reports keep it with the run configuration
            argv = manifest['config']['argv']
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DatasetLoadError('%s: %s' % (args.manifest, e))
    if not argv:
        raise DatasetLoadError('%s: empty argv' % args.manifest)
    flag = '--report' if argv[0] == 'experiment' else '--out'
    argv = list(argv) + [flag, args.out]
    logging.info('replay: %r' % (argv,))
    return main(argv)


def build_parser():
    parser = CliParser(prog='emins.py', description=__doc__.split('\n')[1])
    parser.add_argument('-d', '--debug', action='store_true')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('poison', help='write a poisoned copy of a dataset')
    _add_dataset_flags(p)
    p.add_argument('--out', required=True, metavar='DIR')
    p.add_argument('--method', choices=METHODS, default=METHOD_EMINS)
    p.add_argument('--rv', type=float, default=0.05)
    p.add_argument('--re', type=float, default=0.2)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--outer-iters', type=int, default=10)
    p.add_argument('--inner-steps', type=int, default=5)
    p.add_argument('--lr', type=float, default=0.01)
    p.add_argument('--stop-loss', type=float, default=0.1)
    p.add_argument('--grad-refresh-every', type=int, default=1)
    p.add_argument('--reinit-surrogate', action='store_true')
    p.add_argument('--jobs', type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser('train', help='train a victim and save it')
    _add_dataset_flags(p)
    p.add_argument('--out', required=True, metavar='DIR')
    p.add_argument('--epochs', type=int, default=200)
    p.add_argument('--lr', type=float, default=0.01)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--train-fraction', type=float, default=0.8)
    p.add_argument('--full', action='store_true',
                   help='train on every graph instead of the train split')
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='score a saved model')
    _add_dataset_flags(p)
    p.add_argument('--model', required=True, metavar='FILE')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--train-fraction', type=float, default=0.8)
    p.add_argument('--all', action='store_true',
                   help='score every graph instead of the test split')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('experiment', help='compare clean and poisoned data')
    _add_dataset_flags(p, data_flag='--clean')
    p.add_argument('--variant', action='append', default=[],
                   metavar='NAME=DIR')
    p.add_argument('--archs', default='gcn,gin')
    p.add_argument('--seeds', type=int, default=3)
    p.add_argument('--report', required=True, metavar='FILE')
    p.add_argument('--epochs', type=int, default=200)
    p.add_argument('--lr', type=float, default=0.01)
    p.add_argument('--train-fraction', type=float, default=0.8)
    p.add_argument('--hidden', type=int, default=32)
    p.add_argument('--layers', type=int, default=2)
    p.add_argument('--jobs', type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser('inspect', help='per-graph edit statistics')
    _add_dataset_flags(p, data_flag='--clean')
    p.add_argument('--poisoned', required=True, metavar='DIR')
    p.add_argument('--edits', metavar='FILE')
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser('replay', help='rerun the command in a manifest')
    p.add_argument('manifest', metavar='MANIFEST')
    p.add_argument('--out', required=True, metavar='DIR')
    p.set_defaults(func=cmd_replay)
    return parser


def main(raw_args=sys.argv[1:]):
    parser = build_parser()
    try:
        args = parser.parse_args(raw_args)
    except UsageError as e:
        sys.stderr.write('%s\n' % e)
        return EXIT_USAGE
    if args.debug:
        logging.basicConfig(level=logging.DEBUG)
        Poisoner.debug = 1
        VictimTrainer.debug = 1
        EditLog.debug = 1
    command_args = list(raw_args)
    if '-d' in command_args or '--debug' in command_args:
        command_args = [a for a in command_args if a not in ('-d', '--debug')]
    try:
        return args.func(args, command_args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write('%s\n' % e)
        return EXIT_USAGE
    except ContractViolation as e:
        sys.stderr.write('error: %s\n' % e)
        return EXIT_USAGE
    except (DatasetLoadError, DatasetMismatchError) as e:
        sys.stderr.write('error: %s\n' % e)
        return EXIT_DATASET
    except TrainingDivergence as e:
        sys.stderr.write('error: %s\n' % e)
        return EXIT_DIVERGENCE
    except GraphException as e:
        sys.stderr.write('error: %s\n' % e)
        return EXIT_DATASET


if __name__ == '__main__':
    sys.exit(main())
