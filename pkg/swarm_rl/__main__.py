"""This means `python -m swarm_rl` should run the CLI."""

from ._cli import cli

if __name__ == '__main__':
    cli()
