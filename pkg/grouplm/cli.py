"""Command line entry point.

    grouplm synthesize --out data/synth.jsonl --seed 7
    grouplm train --dataset data/synth.jsonl --model model.json --groups 2
    grouplm eval --model model.json --dataset data/test.jsonl --out reports/
    grouplm xval --dataset data/synth.jsonl --folds 2 --groups-list 1-4 --out xval/
    grouplm inspect --model model.json

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import logging
from pathlib import Path
import sys

import pandas as pd
import tqdm

from grouplm import data, evaluation, training
from grouplm.exceptions import GroupLMError, InvalidInputError, NumericalFailureError
from grouplm.mixture import ModelParams
from grouplm.utility import check_and_create_dir, enumerate_variables, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f'{self.prog}: error: {message}\n')


def int_list(text):
    """Parse '1,2,5' or '1-4' (or a mix such as '1-3,6') into a list of ints."""
    values = []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        start, sep, stop = part.partition('-')
        try:
            if sep:
                values.extend(range(int(start), int(stop) + 1))
            else:
                values.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f'not an integer list: {text!r}') from None
    if not values:
        raise argparse.ArgumentTypeError(f'empty list: {text!r}')
    return values


def float_list(text):
    try:
        values = [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'not a number list: {text!r}') from None
    if not values:
        raise argparse.ArgumentTypeError(f'empty list: {text!r}')
    return values


def _add_training_flags(p):
    g = p.add_argument_group('training')
    g.add_argument('--groups', type=int, default=2, help='number of user groups K [implementation default: 2]')
    g.add_argument('--sigma-pi', type=float, default=0.3,
                   help='prior variance of the group weights pi [experimental setting: 0.3]')
    g.add_argument('--sigma-rho', type=float, default=1.0,
                   help='prior variance of the group feature weights rho [experimental setting: 1.0]')
    g.add_argument('--restarts', type=int, default=5, help='random restarts [implementation default: 5]')
    g.add_argument('--inner-steps', type=int, default=5,
                   help='L-BFGS steps per EM iteration [implementation default: 5]')
    g.add_argument('--em-max-iters', type=int, default=200, help='EM iteration cap [implementation default: 200]')
    g.add_argument('--em-tol', type=float, default=1e-6,
                   help='relative objective change that stops EM [implementation default: 1e-6]')


def _add_synthetic_flags(p):
    defaults = data.SyntheticConfig()
    g = p.add_argument_group('synthetic data')
    g.add_argument('--num-users', type=int, default=defaults.num_users)
    g.add_argument('--obs-per-user', type=int, default=defaults.obs_per_user)
    g.add_argument('--candidates-per-scene', type=int, default=defaults.candidates_per_scene)
    g.add_argument('--fraction-max-group', type=float, default=defaults.fraction_max_group,
                   help='share of users who pick the most salient candidate')
    g.add_argument('--noise-rate', type=float, default=defaults.noise_rate,
                   help='probability of a uniformly random pick')
    g.add_argument('--distractor-features', type=int, default=defaults.distractor_features)


def build_parser():
    parser = ArgumentParser(prog='grouplm', description='Log-linear user models with latent user groups.')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more log output')
    parser.add_argument('-q', '--quiet', action='store_true', help='only warnings and errors')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('synthesize', help='generate the synthetic salience dataset')
    p.add_argument('--out', default='synthetic.jsonl', help='dataset file to write; truth goes to *.truth')
    p.add_argument('--seed', type=int, default=0)
    _add_synthetic_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser('train', help='train a model with EM')
    p.add_argument('--dataset', required=True)
    p.add_argument('--model', default='model.json', help='model file to write')
    p.add_argument('--trace', default=None, help='trace CSV [default: <model>.trace.csv]')
    p.add_argument('--seed', type=int, default=0)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='evaluate a model sequentially and statically')
    p.add_argument('--model', required=True)
    p.add_argument('--dataset', required=True, help='test dataset')
    p.add_argument('--out', default='report', help='report directory')
    p.add_argument('--no-predictions', action='store_true', help='skip the per-prediction CSV')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('xval', help='user-disjoint cross-validation')
    p.add_argument('--dataset', required=True)
    p.add_argument('--folds', type=int, default=9)
    p.add_argument('--groups-list', type=int_list, default=None,
                   help="group counts to sweep, e.g. '1-10' [default: --groups]")
    p.add_argument('--sigma-pi-list', type=float_list, default=None, help='sigma_pi values to sweep')
    p.add_argument('--sigma-rho-list', type=float_list, default=None, help='sigma_rho values to sweep')
    p.add_argument('--out', default='xval', help='report directory')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--workers', type=int, default=1, help='parallel folds [default: 1, reproducible]')
    p.add_argument('--no-predictions', action='store_true', help='skip the per-prediction CSVs')
    _add_training_flags(p)
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser('inspect', help='describe a model file')
    p.add_argument('--model', required=True)
    p.add_argument('--dataset', default=None, help='also score this dataset')
    p.set_defaults(func=cmd_inspect)

    return parser


def _hyperparams(args, **overrides):
    h = training.Hyperparams(
        K=args.groups, sigma_pi=args.sigma_pi, sigma_rho=args.sigma_rho,
        em_max_iters=args.em_max_iters, em_tol=args.em_tol, inner_steps=args.inner_steps,
        restarts=args.restarts, seed=args.seed)
    return replace(h, **overrides) if overrides else h


def cmd_synthesize(args):
    cfg = data.SyntheticConfig(
        num_users=args.num_users, obs_per_user=args.obs_per_user,
        candidates_per_scene=args.candidates_per_scene, fraction_max_group=args.fraction_max_group,
        noise_rate=args.noise_rate, distractor_features=args.distractor_features, seed=args.seed)
    d = data.generate_synthetic(cfg)

    out = Path(args.out)
    if out.parent != Path('.'):
        check_and_create_dir(out.parent)
    data.save(d, out)
    data.write_truth(data.synthetic_truth(cfg), data.truth_path(out))
    print(f'wrote {d.num_observations} observations from {len(d)} users to {out}')
    return EXIT_OK


def cmd_train(args):
    d = data.load(args.dataset)
    h = _hyperparams(args)
    result = training.em_fit(d, h, progress=True)

    model = Path(args.model)
    trace = Path(args.trace) if args.trace else model.with_suffix('.trace.csv')
    for path in (model, trace):
        if path.parent != Path('.'):
            check_and_create_dir(path.parent)
    result.params.save(model)
    result.trace.to_csv(trace, index=False, lineterminator='\n')

    print(result.restarts.to_string(index=False))
    print(f'final objective: {result.objective:.10g}')
    print(f'wrote {model} and {trace}')
    return EXIT_OK


def _print_summary(report):
    summary = report.summary()
    line = f'{summary["mode"]:>10}: accuracy {summary["accuracy"]:.4f}'
    if report.binary:
        line += f', micro F1 {summary["micro_f1"]:.4f}'
    print(line + f' over {summary["observations"]} observations')


def cmd_eval(args):
    m = ModelParams.load(args.model)
    test = data.load(args.dataset)
    for report in (evaluation.evaluate_sequential(test, m), evaluation.evaluate_static(test, m)):
        evaluation.write_report(report, args.out, prefix=f'{report.mode}_',
                                predictions=not args.no_predictions)
        _print_summary(report)
    return EXIT_OK


def check_user_disjoint(folds):
    """Abort when a test fold shares a user with its training folds."""
    for i, (train, test) in enumerate(folds):
        shared = set(train.user_ids) & set(test.user_ids)
        if shared:
            raise GroupLMError(f'fold {i}: users {sorted(shared)} appear in training and test')


def run_fold(train, test, h):
    """Train on one fold and evaluate on its held-out users."""
    m = training.em_fit(train, h).params
    return evaluation.evaluate_sequential(test, m), evaluation.evaluate_static(test, m)


def _run_folds(folds, h, workers, job=run_fold):
    trains, tests = zip(*folds)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map keeps fold order, so pooled reports do not depend on workers
            return list(pool.map(job, trains, tests, [h] * len(folds)))
    jobs = zip(trains, tests)
    if len(folds) > 1:
        jobs = tqdm.tqdm(jobs, total=len(folds), desc=f'folds K={h.K}',
                         disable=not logger.isEnabledFor(logging.INFO))
    return [job(train, test, h) for train, test in jobs]


def cmd_xval(args):
    if args.workers < 1:
        raise InvalidInputError(f'--workers must be at least 1, got {args.workers}')
    d = data.load(args.dataset)
    folds = data.split_user_folds(d, args.folds, seed=args.seed)
    check_user_disjoint(folds)

    grid = enumerate_variables({
        'K': args.groups_list or [args.groups],
        'sigma_pi': args.sigma_pi_list or [args.sigma_pi],
        'sigma_rho': args.sigma_rho_list or [args.sigma_rho],
    })
    out = Path(args.out)
    rows = []
    for point in grid:
        h = _hyperparams(args, **point)
        logger.info('cross-validating K=%d sigma_pi=%g sigma_rho=%g', h.K, h.sigma_pi, h.sigma_rho)
        results = _run_folds(folds, h, args.workers)
        sequential = evaluation.pool_reports(r[0] for r in results)
        static = evaluation.pool_reports(r[1] for r in results)

        target = out / f'K{h.K}_sigma-pi{h.sigma_pi:g}_sigma-rho{h.sigma_rho:g}'
        for report in (sequential, static):
            evaluation.write_report(report, target, prefix=f'{report.mode}_',
                                    predictions=not args.no_predictions)
        print(f'K={h.K} sigma_pi={h.sigma_pi:g} sigma_rho={h.sigma_rho:g}')
        _print_summary(sequential)
        _print_summary(static)
        rows.append((h.K, h.sigma_pi, h.sigma_rho, sequential.accuracy, sequential.micro_f1,
                     static.accuracy, static.micro_f1))

    sweep = pd.DataFrame(rows, columns=['groups', 'sigma_pi', 'sigma_rho', 'seq_accuracy', 'seq_f1',
                                        'static_accuracy', 'static_f1'])
    check_and_create_dir(out)
    sweep.to_csv(out / 'sweep.csv', index=False, lineterminator='\n')
    return EXIT_OK


def cmd_inspect(args):
    m = ModelParams.load(args.model)
    g, share = m.dominant_group()
    print(f'groups: {m.K}')
    print(f'features: {m.feature_dim}')
    print(f'dominant group: {g} (prior {share:.4f})')

    table = pd.DataFrame(m.group_weights, columns=list(m.feature_names))
    table.insert(0, 'prior', m.prior_probs)
    table.insert(0, 'pi', m.pi)
    table.index.name = 'group'
    with pd.option_context('display.width', 200, 'display.max_columns', 50):
        print(table.to_string())
    for key, value in m.metadata.items():
        print(f'{key}: {value}')

    if args.dataset:
        d = data.load(args.dataset)
        print(f'dataset: {len(d)} users, {d.num_observations} observations, '
              f'longest history {d.max_length}')
        h = training.Hyperparams(**m.metadata['hyperparams']) if 'hyperparams' in m.metadata \
            else training.Hyperparams(K=m.K)
        print(f'objective on {args.dataset}: {training.log_posterior_objective(d, m, h):.10g}')
        mass = training.e_step(d, m).probs.mean(axis=0)
        for group, value in enumerate(mass):
            print(f'group {group}: responsibility mass {value:.4f}')
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(-1 if args.quiet else args.verbose)
    try:
        return args.func(args)
    except NumericalFailureError as e:
        print(f'grouplm: numerical failure: {e}', file=sys.stderr)
        return EXIT_NUMERICAL
    except (GroupLMError, OSError) as e:
        print(f'grouplm: error: {e}', file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
