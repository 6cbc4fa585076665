#!/usr/bin/env python3
"""
Main entry point for geocert: certification and certified training against geometric transformations
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from config.runtime import configure_torch, init_logging
from config.settings import CERT_BATCH_SIZE, KAPPA_FINAL, LOG_FILE, TRAIN_BATCH_SIZE, TUNE_SAMPLES, TrainConfig
from core.batch_certifier import certify_dataset
from core.certifier import certify_regression_dataset, split_params
from core.grid_cache import GridCache
from core.idx_reader import load_mnist_dir, make_synthetic_dataset, make_synthetic_regression, split_train_validation
from core.interp import interpolate, make_interp_grid
from core.model_store import load_model, save_model
from core.network import Network, describe_network
from core.spec_parser import parse_nu, parse_splits, parse_transforms, resolve_split_counts
from core.trainer import fit
from core.tuning import tune_nu
from layers.layer_factory import load_architecture
from models.dataset import Dataset
from models.grid import PaddingStrategy
from utils.error_handler import GeoCertError, error_handler
from utils.report_utils import emit_report, provenance, write_train_log

logger = logging.getLogger(__name__)

GOLDEN_IMAGE = [[0.55, 0.50, 0.42],
                [0.53, 0.49, 0.51],
                [0.56, 0.62, 0.45]]
GOLDEN_TRANSFORMS = "Sc(-2,2)"


class UsageError(Exception):
    """Raised by the argument parser instead of exiting the process."""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def setup_argument_parser():
    """Setup command line argument parser"""
    parser = ArgumentParser(
        prog="geocert",
        description="Certified robustness and certified training against geometric transformations",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Data sources: an MNIST directory with the standard IDX file names, or\n"
            "  synthetic[:N[:CxHxW[:CLASSES]]] / synthetic-regression[:N[:CxHxW]]\n"
            "Transforms: e.g. 'R(-30,30)', 'R(30)', 'Sc(-2,2) R(-5,5)', 'Tu(-1,1) Tv(-1,1)', 'C(5) B(-0.01,0.01)'"
        ),
    )
    parser.add_argument('--log-level', default=None, help='Logging level (default from LOG_LEVEL)')
    parser.add_argument('--log-file', default=None, help='Also log to this file (default from LOG_FILE)')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Certify command
    certify_parser = subparsers.add_parser('certify', help='Certify a model against a transform range')
    certify_parser.add_argument('--model', required=True, help='Model file')
    certify_parser.add_argument('--data', required=True, help='Data source (test split is used)')
    certify_parser.add_argument('--transforms', required=True, help='Transform specification')
    certify_parser.add_argument('--splits', default='1', help="Split counts or widths, e.g. '240' or 'w0.25'")
    certify_parser.add_argument('--batch', type=int, default=CERT_BATCH_SIZE, help='Images per batch')
    certify_parser.add_argument('--workers', type=int, default=None, help='Certification pool size')
    certify_parser.add_argument('--limit', type=int, default=None, help='Certify only the first N images')
    certify_parser.add_argument('--dtype', choices=['float64', 'float32'], default='float64',
                                help='Floating point precision')
    certify_parser.add_argument('--padding', choices=[s.value for s in PaddingStrategy], default='zero',
                                help='Fill for source pixels outside the image')
    certify_parser.add_argument('--no-early-exit', action='store_true',
                                help='Check every cell even after one fails')
    certify_parser.add_argument('--seed', type=int, default=0, help='Seed for synthetic data')
    certify_parser.add_argument('--out', default=None, help='Report file (.json or .csv); stdout if omitted')

    # Train command
    train_parser = subparsers.add_parser('train', help='Train a network with certified geometric training')
    train_parser.add_argument('--data', required=True, help='Data source (train split is used)')
    train_parser.add_argument('--arch', required=True, help='Architecture preset or JSON file')
    train_parser.add_argument('--transforms', required=True, help='Transform specification')
    train_parser.add_argument('--nu', default=None, help='Final local ball radius per parameter (default 0)')
    train_parser.add_argument('--epochs', type=int, required=True, help='Number of epochs')
    train_parser.add_argument('--warmup', type=int, default=0, help='Warm-up epochs')
    train_parser.add_argument('--rampup', type=int, default=0, help='Ramp-up epochs')
    train_parser.add_argument('--kappa-final', type=float, default=KAPPA_FINAL, help='Final clean-loss weight')
    train_parser.add_argument('--batch-size', type=int, default=TRAIN_BATCH_SIZE, help='Mini-batch size')
    train_parser.add_argument('--lr', type=float, default=None, help='Adam learning rate')
    train_parser.add_argument('--lr-milestones', default='', help='Comma-separated epochs where lr decays')
    train_parser.add_argument('--method', choices=['cgt', 'augment', 'ibp_augment'], default='cgt',
                              help='Training method')
    train_parser.add_argument('--validation', type=float, default=0.0,
                              help='Fraction of the training data held out for validation')
    train_parser.add_argument('--limit', type=int, default=None, help='Use only the first N images')
    train_parser.add_argument('--seed', type=int, default=0, help='Random seed')
    train_parser.add_argument('--out', required=True, help='Output model file')
    train_parser.add_argument('--log', default=None, help='Per-epoch CSV log')

    # Tune command
    tune_parser = subparsers.add_parser('tune', help='Measure pixel widths for a candidate nu')
    tune_parser.add_argument('--data', required=True, help='Data source (train split is used)')
    tune_parser.add_argument('--transforms', required=True, help='Transform specification')
    tune_parser.add_argument('--nu', required=True, help='Candidate local ball radius per parameter')
    tune_parser.add_argument('--samples', type=int, default=TUNE_SAMPLES, help='Number of sampled parameters')
    tune_parser.add_argument('--limit', type=int, default=None, help='Use only the first N images')
    tune_parser.add_argument('--seed', type=int, default=0, help='Random seed')
    tune_parser.add_argument('--out', default=None, help='Report file; stdout if omitted')

    # Bench command
    bench_parser = subparsers.add_parser('bench', help='Time grid construction against amortized interpolation')
    bench_parser.add_argument('--sizes', default='28x28,32x32,66x200', help='Comma-separated HxW sizes')
    bench_parser.add_argument('--batch', type=int, default=256, help='Images per interpolation batch')
    bench_parser.add_argument('--transforms', default='R(-0.125,0.125)', help='Transform specification')
    bench_parser.add_argument('--repeats', type=int, default=3, help='Timing repetitions (best is kept)')
    bench_parser.add_argument('--seed', type=int, default=0, help='Random seed for the image batch')
    bench_parser.add_argument('--out', default=None, help='CSV file; stdout if omitted')

    # Golden command
    golden_parser = subparsers.add_parser('golden', help='Run the 3x3 scaling example and print its tensors')
    golden_parser.add_argument('--json', action='store_true', help='Output as JSON')

    return parser


def _parse_shape(text: str) -> List[int]:
    try:
        return [int(d) for d in text.lower().split('x')]
    except ValueError:
        raise UsageError(f"Invalid shape {text!r}; expected e.g. 1x28x28")


def load_dataset(source: str, split: str, limit: Optional[int] = None, seed: int = 0) -> Dataset:
    """
    Resolve a --data argument.

    Synthetic sources use a different seed for the test split so train and test differ.
    """
    if source.startswith('synthetic'):
        kind, *fields = source.split(':')
        n = int(fields[0]) if fields and fields[0] else 1000
        if limit is not None:
            n = min(n, limit)
        data_seed = seed if split == 'train' else seed + 1
        if kind == 'synthetic-regression':
            shape = _parse_shape(fields[1]) if len(fields) > 1 else [3, 32, 32]
            return make_synthetic_regression(n, shape, seed=data_seed)
        if kind != 'synthetic':
            raise UsageError(f"Unknown data source {source!r}")
        shape = _parse_shape(fields[1]) if len(fields) > 1 else [1, 28, 28]
        n_classes = int(fields[2]) if len(fields) > 2 else 10
        return make_synthetic_dataset(n, shape, n_classes=n_classes, seed=data_seed)
    return load_mnist_dir(source, split=split, limit=limit)


def cmd_certify(args) -> int:
    """Certify command implementation"""
    net = load_model(args.model)
    dataset = load_dataset(args.data, 'test', args.limit, args.seed)
    chain = parse_transforms(args.transforms)
    counts = resolve_split_counts(parse_splits(args.splits), chain)
    plan = split_params(chain, counts)
    logger.info(f"Certifying {len(dataset)} images of {dataset.name} under {chain.describe()} "
                f"with {plan.K} cells {list(plan.counts)}")

    if args.dtype == 'float32':
        net = net.to(torch.float32)
        dataset = dataset.to(torch.float32)

    config = {
        'model': args.model, 'data': args.data, 'transforms': args.transforms, 'splits': args.splits,
        'batch': args.batch, 'workers': args.workers, 'limit': args.limit, 'dtype': args.dtype,
        'padding': args.padding, 'early_exit': not args.no_early_exit,
    }
    cache = GridCache()
    if net.task == 'regression':
        result = certify_regression_dataset(net, dataset, chain, plan, batch_size=args.batch, cache=cache)
    else:
        result = certify_dataset(net, dataset, chain, plan, workers=args.workers, batch_size=args.batch,
                                 early_exit=not args.no_early_exit, cache=cache,
                                 padding=PaddingStrategy(args.padding))

    report = {
        'provenance': provenance('certify', config, args.seed),
        'transforms': chain.to_dict(),
        'splits': plan.to_dict(),
        **result.to_dict(),
    }
    stats = error_handler.get_error_statistics()
    if stats['total_errors']:
        logger.warning(f"{stats['total_errors']} image errors during certification: {stats['error_types']}")
        report['error_statistics'] = {k: stats[k] for k in ('total_errors', 'error_types')}
    emit_report(report, args.out)
    return error_handler.EXIT_OK


def cmd_train(args) -> int:
    """Train command implementation"""
    architecture = load_architecture(args.arch)
    dataset = load_dataset(args.data, 'train', args.limit, args.seed)
    chain = parse_transforms(args.transforms)
    nu = parse_nu(args.nu, chain) if args.nu else [0.0] * len(chain.parameters())
    milestones = [int(m) for m in args.lr_milestones.split(',') if m.strip()]

    options = dict(
        epochs=args.epochs, batch_size=args.batch_size, warmup_epochs=args.warmup,
        rampup_epochs=args.rampup, kappa_final=args.kappa_final, nu_final=nu,
        lr_milestones=milestones, seed=args.seed, method=args.method,
        task=architecture.get('task', dataset.task), validation_fraction=args.validation,
        augmentation=chain,
    )
    if args.lr is not None:
        options['lr'] = args.lr
    cfg = TrainConfig(**options)

    validation = None
    if cfg.validation_fraction > 0:
        dataset, validation = split_train_validation(dataset, cfg.validation_fraction, cfg.seed)

    net = Network.from_descriptors(architecture['layers'], architecture['input_shape'], seed=cfg.seed,
                                   task=cfg.task)
    logger.info(f"Architecture {args.arch}: {describe_network(net)}")
    result = fit(net, dataset, cfg, validation=validation)
    manifest = save_model(result.network, args.out)
    if args.log:
        write_train_log(result.log, args.log, chain.parameter_names())

    final = result.log[-1].loss if result.log else float('nan')
    print(f"Trained {len(result.log)} epochs, final loss {final:.4f}; "
          f"model written to {args.out} (sha256 {manifest['sha256'][:12]})")
    return error_handler.EXIT_OK


def cmd_tune(args) -> int:
    """Tune command implementation"""
    dataset = load_dataset(args.data, 'train', args.limit, args.seed)
    chain = parse_transforms(args.transforms)
    nu = parse_nu(args.nu, chain)
    result = tune_nu(dataset, chain, nu, seed=args.seed, samples=args.samples)
    config = {'data': args.data, 'transforms': args.transforms, 'nu': args.nu,
              'samples': args.samples, 'limit': args.limit}
    report = {
        'provenance': provenance('tune', config, args.seed),
        'transforms': chain.to_dict(),
        **result.to_dict(),
    }
    emit_report(report, args.out, fmt='json')
    return error_handler.EXIT_OK


def bench_rows(sizes: Sequence[Sequence[int]], batch: int, transforms: str, repeats: int = 3,
               seed: int = 0) -> pd.DataFrame:
    """Best-of-`repeats` timings of make_interp_grid and a batched interpolate per image size."""
    chain = parse_transforms(transforms)
    rng = np.random.default_rng(seed)
    rows = []
    for height, width in sizes:
        images = torch.from_numpy(rng.uniform(0.0, 1.0, size=(batch, 1, height, width)))
        grid_ms = interp_ms = float('inf')
        for _ in range(max(1, repeats)):
            started = time.perf_counter()
            grid = make_interp_grid(height, width, chain)
            grid_ms = min(grid_ms, (time.perf_counter() - started) * 1000)
            started = time.perf_counter()
            interpolate(images, grid)
            interp_ms = min(interp_ms, (time.perf_counter() - started) * 1000)
        rows.append({
            'H': height, 'W': width, 'batch': batch, 'transform': chain.describe(),
            'grid_ms': round(grid_ms, 3), 'interp_ms': round(interp_ms, 3),
            'nnz_fraction': grid.density,
        })
        logger.info(f"{height}x{width}: grid {grid_ms:.1f} ms, interpolate {interp_ms:.1f} ms, "
                    f"nnz fraction {grid.density:.2e}")
    return pd.DataFrame(rows, columns=['H', 'W', 'batch', 'transform', 'grid_ms', 'interp_ms', 'nnz_fraction'])


def cmd_bench(args) -> int:
    """Bench command implementation"""
    sizes = []
    for item in args.sizes.split(','):
        shape = _parse_shape(item.strip())
        if len(shape) != 2:
            raise UsageError(f"Invalid size {item!r}; expected HxW")
        sizes.append(shape)
    frame = bench_rows(sizes, args.batch, args.transforms, args.repeats, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False)
        print(f"Wrote {len(frame)} benchmark rows to {args.out}")
    else:
        sys.stdout.write(frame.to_csv(index=False))
    return error_handler.EXIT_OK


def golden_example() -> dict:
    """Interval tensors of the 3x3 scaling example: grid counts, weights and output intervals."""
    chain = parse_transforms(GOLDEN_TRANSFORMS)
    image = torch.tensor(GOLDEN_IMAGE, dtype=torch.float64).reshape(1, 1, 3, 3)
    grid = make_interp_grid(3, 3, chain)
    out = interpolate(image, grid)
    return {
        'transform': chain.describe(),
        'image': GOLDEN_IMAGE,
        'z': grid.z.tolist(),
        'grid': grid.to_dict(),
        'lo': out.lo[0, 0].tolist(),
        'hi': out.hi[0, 0].tolist(),
    }


def cmd_golden(args) -> int:
    """Golden command implementation"""
    result = golden_example()
    if args.json:
        print(json.dumps(result, indent=2))
        return error_handler.EXIT_OK

    print(f"Scaling example, transform {result['transform']}")
    print("=" * 50)
    print(f"z = {result['z']}")
    print("\nOutput intervals:")
    for lo_row, hi_row in zip(result['lo'], result['hi']):
        print("  " + "  ".join(f"[{lo:.2f}, {hi:.2f}]" for lo, hi in zip(lo_row, hi_row)))
    print("\nExact endpoints:")
    for i, (lo_row, hi_row) in enumerate(zip(result['lo'], result['hi'])):
        for j, (lo, hi) in enumerate(zip(lo_row, hi_row)):
            print(f"  ({i},{j}) [{lo:.6f}, {hi:.6f}]")
    return error_handler.EXIT_OK


COMMANDS = {
    'certify': cmd_certify,
    'train': cmd_train,
    'tune': cmd_tune,
    'bench': cmd_bench,
    'golden': cmd_golden,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, dispatch to a command and map failures to exit codes.

    Returns:
        0 on success, 1 on a domain or I/O error, 2 on a usage error
    """
    parser = setup_argument_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return error_handler.EXIT_USAGE

    if not args.command:
        parser.print_usage(sys.stderr)
        return error_handler.EXIT_USAGE

    init_logging(args.log_level, args.log_file or LOG_FILE)
    configure_torch()
    error_handler.clear_error_history()

    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return error_handler.EXIT_USAGE
    except (GeoCertError, OSError, ValueError, IndexError) as e:
        info = error_handler.create_error_info(e, {'command': args.command})
        logger.error(f"{args.command} failed ({info.error_type.value}): {e}")
        print(f"Error: {e}", file=sys.stderr)
        return error_handler.exit_code_for(e)


def main():
    """Main function"""
    sys.exit(run())


if __name__ == "__main__":
    main()
