from __future__ import annotations as _annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import cast, get_args

from pydantic_core import to_json

from . import __version__
from .checkpoint import load_checkpoint
from .config import load_config
from .exceptions import SwarmError
from .harness import compare_observation_models, evaluate, replay_dump, run_training
from .protocols import ObservationMode

logger = logging.getLogger(__name__)


def cli():
    sys.exit(cli_logic())


def cli_logic(args_list: Sequence[str] | None = None) -> int:
    """Run the CLI."""
    parser = argparse.ArgumentParser(
        prog='swarm-rl',
        description=f'swarm-rl CLI v{__version__}\n\nTrain and inspect shared swarm policies with TRPO.\n',
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument('--verbose', action='store_true', help='Enable verbose logging')
    parser.add_argument('--version', action='store_true', help='Show version and exit')
    commands = parser.add_subparsers(dest='command', metavar='command')

    train = commands.add_parser('train', help='Train a policy, artifacts go to the output directory.')
    train.add_argument('--config', type=Path, required=True, help='JSON run config.')
    train.add_argument('--seed', type=int, help='Override master_seed.')
    train.add_argument('--out', type=Path, help='Override output_directory.')
    train.add_argument('--workers', type=int, help='Rollout worker processes, default from the config.')

    evaluate_cmd = commands.add_parser('eval', help='Evaluate a checkpoint and print metrics as JSON.')
    evaluate_cmd.add_argument('--checkpoint', type=Path, required=True)
    evaluate_cmd.add_argument('--config', type=Path, required=True)
    evaluate_cmd.add_argument('--episodes', type=int, help='Number of episodes, default eval_episodes.')
    evaluate_cmd.add_argument('--seed', type=int, default=0)
    evaluate_cmd.add_argument('--agents', type=int, help='Evaluate with a different swarm size.')
    evaluate_cmd.add_argument('--stochastic', action='store_true', help='Sample actions instead of using the mean')

    replay = commands.add_parser('replay', help='Dump one episode as JSON lines.')
    replay.add_argument('--checkpoint', type=Path, required=True)
    replay.add_argument('--config', type=Path, required=True)
    replay.add_argument('--seed', type=int, required=True, help='Episode seed.')
    replay.add_argument('--out', type=Path, required=True, help='Output .jsonl file.')
    replay.add_argument('--stochastic', action='store_true', help='Sample actions instead of using the mean')

    compare = commands.add_parser('compare', help='Train every observation mode and history length, several seeds.')
    compare.add_argument('--config', type=Path, required=True)
    compare.add_argument('--modes', type=_mode_list, default=['sensor', '2d'], help='Comma separated, e.g. 2d,2dsp')
    compare.add_argument('--history', type=_int_list, default=[2], help='Comma separated history lengths.')
    compare.add_argument('--seeds', type=_int_list, default=[0, 1, 2], help='Comma separated master seeds.')
    compare.add_argument('--out', type=Path, help='Override output_directory.')

    args = parser.parse_args(args_list)
    if args.version:
        print(f'swarm-rl {__version__}')
        return 0
    elif args.command:
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            stream=sys.stderr,
            format='%(message)s',
        )
        try:
            return _COMMANDS[args.command](args)
        except SwarmError as exc:
            if args.verbose:
                logger.debug('%s failed', args.command, exc_info=exc)
            print(f'error[{exc.category}]: {exc}', file=sys.stderr)
            return exc.exit_code
    else:
        parser.error('command is required')


def _run_train(args: argparse.Namespace) -> int:
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides['master_seed'] = args.seed
    if args.out is not None:
        overrides['output_directory'] = args.out
    if args.workers is not None:
        overrides['workers'] = args.workers
    config = load_config(args.config, overrides)
    result = run_training(config)
    logger.info('final checkpoint: %s', result.final_checkpoint)
    return 0


def _run_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, {} if args.agents is None else {'sim.n_agents': args.agents})
    checkpoint = load_checkpoint(args.checkpoint)
    metrics = evaluate(checkpoint.params, config, args.episodes, args.seed, deterministic=not args.stochastic)
    print(to_json(metrics, indent=2).decode())
    return 0


def _run_replay(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    checkpoint = load_checkpoint(args.checkpoint)
    replay_dump(checkpoint.params, config, args.seed, args.out, deterministic=not args.stochastic)
    return 0


def _run_compare(args: argparse.Namespace) -> int:
    config = load_config(args.config, {} if args.out is None else {'output_directory': args.out})
    rows = compare_observation_models(config, args.modes, args.history, args.seeds)
    for row in rows:
        print(f'{row.mode:>6} η={row.history_length}: {row.mean_final_return:.3f} ± {row.std_final_return:.3f}')
    return 0


_COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    'train': _run_train,
    'eval': _run_eval,
    'replay': _run_replay,
    'compare': _run_compare,
}


def _int_list(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(',') if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated integers, got {value!r}') from None


def _mode_list(value: str) -> list[ObservationMode]:
    modes = [part for part in value.split(',') if part]
    known = get_args(ObservationMode)
    for mode in modes:
        if mode not in known:
            raise argparse.ArgumentTypeError(f'unknown observation mode {mode!r}, expected one of {", ".join(known)}')
    return cast(list[ObservationMode], modes)
