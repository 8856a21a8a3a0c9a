"""
DEDN Toolkit Command Line

``run(argv)`` executes one ``dedn`` subcommand and returns its exit code
instead of exiting, so the pipeline can be driven from Python and tests.
"""

import os
import sys

import django
from django.apps import apps
from django.core.management.base import CommandError


def setup():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'dedn_toolkit.settings')
    if not apps.ready:
        django.setup()


def run(argv=None):
    """
    Run ``dedn`` with ``argv`` (default: the process arguments).

    Returns:
        0 on success, 1 on validation errors, 2 on usage or configuration
        errors.
    """
    setup()
    from zsl.management.commands.dedn import Command

    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    try:
        Command().run_from_argv(['dedn', 'dedn', *argv])
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    except CommandError as exc:
        sys.stderr.write(f'CommandError: {exc}\n')
        return exc.returncode
    return 0
