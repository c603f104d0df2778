"""
Command-line factory for dasnlab - doubly adversarial spoof-factor laboratory.
"""

import logging

import click

from dasnlab.config import Config, config_for_env


class LabGroup(click.Group):
    """
    Click group that turns every failure into the laboratory's exit codes:
    1 configuration or usage error, 2 I/O error, 3 numerical divergence.
    """

    def parse_args(self, ctx, args):
        try:
            return super().parse_args(ctx, args)
        except click.UsageError as error:
            error.show()
            ctx.exit(1)

    def invoke(self, ctx):
        from dasnlab.errors import handle_exception

        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort):
            raise
        except click.UsageError as error:
            error.show()
            ctx.exit(1)
        except Exception as error:
            ctx.exit(handle_exception(error))


def configure_logging(config_class=Config) -> logging.Logger:
    """Attach one stream handler to the package logger."""
    logger = logging.getLogger("dasnlab")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(config_class.LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(config_class.LOG_LEVEL)
    logger.propagate = False
    return logger


def create_cli(config_class=Config):
    """
    Command-line factory function.

    Args:
        config_class: Configuration class to use for logging and defaults.

    Returns:
        Configured click group.
    """
    configure_logging(config_class)

    cli = LabGroup(
        name="dasn-lab",
        help="Doubly adversarial suppression of spoof-irrelevant factors on synthetic data.",
        context_settings={"obj": {"config_class": config_class}},
    )

    from dasnlab.main import COMMANDS

    for command in COMMANDS:
        cli.add_command(command)

    return cli


def main():
    """Console-script entry point; DASN_ENV selects the configuration class."""
    create_cli(config_for_env())()
