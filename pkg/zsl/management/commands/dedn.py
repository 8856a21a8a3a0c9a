"""
DEDN Toolkit Management Command

Usage: python manage.py dedn SUBCOMMAND [flags]

Subcommands:
    gen-synth          write a synthetic bundle
    cluster            build an attribute partition (K-Means, file or preset)
    train              train both experts and write a checkpoint
    eval               score a checkpoint on a bundle's test split
    gradcheck          run the finite-difference gradient suite
    export-attention   write one sample's region attention maps as CSV

Exit codes: 0 success, 1 validation error, 2 usage or configuration error.
"""

import copy
import json
import logging
from dataclasses import asdict
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from zsl.benchmarks import ATTRIBUTE_CLUSTER_SIZES, DATASET_PRESETS
from zsl.clustering import (
    halve_partition,
    kmeans_partition,
    load_manual_partition,
    preset_partition,
    save_partition,
)
from zsl.data import gen_synthetic, load_bundle, save_bundle
from zsl.dedn import Mode
from zsl.evaluation import evaluate, export_attention_maps
from zsl.exceptions import ConfigError, DednError, PartitionError
from zsl.gradcheck import run_suite
from zsl.objectives import ClassificationLoss
from zsl.serializers import (
    KmeansConfigSerializer,
    MetricsReportSerializer,
    SynthConfigSerializer,
    TrainConfigSerializer,
    validated,
)
from zsl.trainer import load_checkpoint, save_checkpoint, train


logger = logging.getLogger(__name__)

SYNTH_FLAGS = ('n_per_class', 'k_seen', 'k_unseen', 'c', 'h', 'w', 'd', 'g',
               'noise_sigma', 'train_fraction', 'class_separation', 'unseen_separation')


def merge_train_config(file_data=None, preset=None, overrides=None):
    """
    Layer training settings: defaults < config file < preset < flags.

    ``weights`` is merged key by key. Returns the validated TrainConfig.
    """
    merged = copy.deepcopy(settings.DEDN['TRAIN'])
    layers = [file_data or {}]
    if preset:
        layers.append(DATASET_PRESETS[preset])
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})

    for layer in layers:
        if not isinstance(layer, dict):
            raise ConfigError('Training configuration must be a JSON object.')
        for key, value in layer.items():
            if key == 'weights' and isinstance(value, dict):
                merged['weights'].update(value)
            else:
                merged[key] = value
    return validated(TrainConfigSerializer, merged, label='training configuration')


def read_json_file(path, what):
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError(f'{what} {path} does not exist.') from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{what} {path} is not valid JSON ({exc}).') from None


class Command(BaseCommand):
    help = 'Zero-shot learning with dual attention experts: data, clustering, training, evaluation.'
    requires_system_checks = []

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', metavar='SUBCOMMAND', required=True)

        def add(name, help_text):
            return subparsers.add_parser(
                name, help=help_text, description=help_text,
                called_from_command_line=parser.called_from_command_line,
            )

        gen = add('gen-synth', 'Write a synthetic attribute-linear bundle.')
        gen.add_argument('--out', required=True, help='Bundle directory')
        gen.add_argument('--seed', type=int)
        gen.add_argument('--n-per-class', type=int)
        gen.add_argument('--k-seen', type=int)
        gen.add_argument('--k-unseen', type=int)
        gen.add_argument('--c', type=int, help='Feature channels')
        gen.add_argument('--h', type=int, help='Feature map height')
        gen.add_argument('--w', type=int, help='Feature map width')
        gen.add_argument('--d', type=int, help='Attributes')
        gen.add_argument('--g', type=int, help='Attribute vector dimension')
        gen.add_argument('--noise-sigma', type=float)
        gen.add_argument('--train-fraction', type=float)
        gen.add_argument('--class-separation', type=int,
                         help='Minimum attributes by which two classes differ')
        gen.add_argument('--unseen-separation', type=int,
                         help='Minimum attributes by which two unseen classes differ')

        cluster = add('cluster', 'Build the attribute partition used by the fine expert.')
        cluster.add_argument('--data', required=True, help='Bundle directory')
        source = cluster.add_mutually_exclusive_group(required=True)
        source.add_argument('--k', type=int, help='K-Means cluster count')
        source.add_argument('--manual', help='JSON partition file')
        source.add_argument('--preset', choices=sorted(ATTRIBUTE_CLUSTER_SIZES),
                            help='Published manual division')
        cluster.add_argument('--seed', type=int, default=0)
        cluster.add_argument('--max-iters', type=int)
        cluster.add_argument('--tol', type=float)
        cluster.add_argument('--unit-norm', action='store_true', default=None)
        cluster.add_argument('--halve', action='store_true', help='Merge adjacent cluster pairs')
        cluster.add_argument('--out', required=True, help='Partition JSON file')

        trainer = add('train', 'Train both experts and write a checkpoint.')
        trainer.add_argument('--data', required=True, help='Bundle directory')
        trainer.add_argument('--config', help='Training configuration JSON')
        trainer.add_argument('--clusters', help='Partition JSON (default: the bundle\'s clusters.json)')
        trainer.add_argument('--out', required=True, help='Checkpoint file')
        trainer.add_argument('--log', help='JSON-lines training log')
        trainer.add_argument('--preset', choices=sorted(DATASET_PRESETS))
        trainer.add_argument('--epochs', type=int)
        trainer.add_argument('--seed', type=int)
        trainer.add_argument('--loss', dest='classification_loss',
                             choices=ClassificationLoss.values)
        trainer.add_argument('--lambda-rc', type=float)
        trainer.add_argument('--lambda-e', type=float)
        trainer.add_argument('--no-channel-attention', dest='channel_attention',
                             action='store_false', default=None)

        evaluator = add('eval', 'Score a checkpoint on the test split.')
        evaluator.add_argument('--data', required=True, help='Bundle directory')
        evaluator.add_argument('--model', required=True, help='Checkpoint file')
        evaluator.add_argument('--mode', choices=Mode.values, default=Mode.GZSL.value)
        evaluator.add_argument('--preset', choices=sorted(DATASET_PRESETS))
        evaluator.add_argument('--lambda-e', type=float)
        evaluator.add_argument('--lambda-rc', type=float)
        evaluator.add_argument('--calibration-epsilon', type=float, default=0.0)
        evaluator.add_argument('--out', help='Report JSON (default: standard output)')

        check = add('gradcheck', 'Compare analytic gradients with finite differences.')
        check.add_argument('--seed', type=int, default=0)
        check.add_argument('--step', type=float)
        check.add_argument('--tolerance', type=float)

        export = add('export-attention', 'Write one sample\'s region attention maps.')
        export.add_argument('--data', required=True, help='Bundle directory')
        export.add_argument('--model', required=True, help='Checkpoint file')
        export.add_argument('--sample', type=int, required=True, help='Sample index')
        export.add_argument('--out', required=True, help='CSV file')

    def handle(self, *args, **options):
        handler = getattr(self, 'handle_' + options['subcommand'].replace('-', '_'))
        try:
            handler(options)
        except DednError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=1) from exc

    # =========================================================================
    # SUBCOMMANDS
    # =========================================================================

    def handle_gen_synth(self, options):
        data = {**settings.DEDN['SYNTH']}
        for name in SYNTH_FLAGS + ('seed',):
            if options.get(name) is not None:
                data[name] = options[name]
        cfg = validated(SynthConfigSerializer, data, label='synthetic configuration')

        bundle = gen_synthetic(cfg)
        save_bundle(bundle, options['out'])
        self.stdout.write(
            f'Wrote {bundle.n} samples ({len(bundle.splits.seen_classes)} seen / '
            f'{len(bundle.splits.unseen_classes)} unseen classes) to {options["out"]}'
        )

    def handle_cluster(self, options):
        cfg = None
        if options['k'] is not None:
            data = {**settings.DEDN['KMEANS'], 'k': options['k'], 'seed': options['seed']}
            for name in ('max_iters', 'tol', 'unit_norm'):
                if options[name] is not None:
                    data[name] = options[name]
            cfg = validated(KmeansConfigSerializer, data, label='K-Means configuration')

        bundle = load_bundle(options['data'])
        if cfg is not None:
            partition = kmeans_partition(bundle.attr_vectors, cfg)
        elif options['manual']:
            partition = load_manual_partition(options['manual'], bundle.d)
        else:
            partition = preset_partition(options['preset'])
            if partition.d != bundle.d:
                raise PartitionError(
                    f'Preset {options["preset"]!r} covers {partition.d} attributes, '
                    f'bundle has D = {bundle.d}'
                )

        if options['halve']:
            partition = halve_partition(partition)
        save_partition(partition, options['out'])
        self.stdout.write(f'Wrote {partition.q} clusters, sizes {partition.sizes}, to {options["out"]}')

    def handle_train(self, options):
        file_data = read_json_file(options['config'], 'Config file') if options['config'] else None
        overrides = {name: options[name] for name in (
            'epochs', 'seed', 'classification_loss', 'lambda_rc', 'lambda_e', 'channel_attention',
        )}
        cfg = merge_train_config(file_data, options['preset'], overrides)

        bundle = load_bundle(options['data'])
        partition = None
        if options['clusters']:
            partition = load_manual_partition(options['clusters'], bundle.d)

        model, history = train(bundle, cfg, partition)
        save_checkpoint(model, cfg, options['out'])
        if options['log']:
            with open(options['log'], 'w', encoding='utf-8') as fh:
                for record in history:
                    fh.write(json.dumps(record, sort_keys=True) + '\n')

        summary = f'Trained {cfg.epochs} epochs'
        if history:
            summary += f', final mean loss {history[-1]["mean_total"]:.6f}'
        self.stdout.write(f'{summary}; checkpoint written to {options["out"]}')

    def handle_eval(self, options):
        model, cfg = load_checkpoint(options['model'])
        bundle = load_bundle(options['data'])

        lambda_e, lambda_rc = cfg.lambda_e, cfg.fusion_lambda_rc
        if options['preset']:
            lambda_e = DATASET_PRESETS[options['preset']]['lambda_e']
            lambda_rc = DATASET_PRESETS[options['preset']]['lambda_rc']
        if options['lambda_e'] is not None:
            lambda_e = options['lambda_e']
        if options['lambda_rc'] is not None:
            lambda_rc = options['lambda_rc']
        if options['calibration_epsilon'] < 0:
            raise ConfigError('--calibration-epsilon must be >= 0')

        metrics = evaluate(
            model, bundle, lambda_e, lambda_rc, mode=options['mode'],
            calibration_epsilon=options['calibration_epsilon'],
            normalize_features=cfg.normalize_features,
        )
        report = MetricsReportSerializer(
            {**asdict(metrics), 'lambda_e': lambda_e, 'lambda_rc': lambda_rc}
        ).data
        text = json.dumps(report, indent=2) + '\n'

        if options['out']:
            Path(options['out']).write_text(text, encoding='utf-8')
            self.stdout.write(self._summary(metrics) + f'; report written to {options["out"]}')
        else:
            self.stdout.write(text, ending='')

    def handle_gradcheck(self, options):
        conf = settings.DEDN['GRADCHECK']
        step = conf['step'] if options['step'] is None else options['step']
        tolerance = conf['tolerance'] if options['tolerance'] is None else options['tolerance']
        if step <= 0 or tolerance <= 0:
            raise ConfigError('--step and --tolerance must be positive')

        results = run_suite(seed=options['seed'], step=step, tolerance=tolerance)
        self.stdout.write(f'{"loss":<10}{"Q":>3}  {"max rel error":>14}  status')
        for result in results:
            self.stdout.write(
                f'{result.loss:<10}{result.q:>3}  {result.max_rel_error:>14.3e}  '
                f'{"ok" if result.passed else "FAIL"}'
            )
        failed = [r for r in results if not r.passed]
        if failed:
            raise CommandError(
                f'{len(failed)} gradient check(s) exceed tolerance {tolerance:g}', returncode=1
            )

    def handle_export_attention(self, options):
        model, cfg = load_checkpoint(options['model'])
        bundle = load_bundle(options['data'])
        export_attention_maps(model, bundle, options['sample'], options['out'],
                              normalize=cfg.normalize_features)
        self.stdout.write(f'Wrote attention maps of sample {options["sample"]} to {options["out"]}')

    @staticmethod
    def _summary(metrics):
        if metrics.mode == Mode.ZSL:
            return f'T {metrics.t:.2f}'
        return f'T {metrics.t:.2f}  U {metrics.u:.2f}  S {metrics.s:.2f}  H {metrics.h:.2f}'
