#!/usr/bin/env python
"""Command-line entry point for the gen_synth, train, eval and report subcommands."""
import os
import sys


def main(argv=None):
    """Run a oneshot_matching subcommand (``python manage.py eval --task cross-modal``)."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'oneshot_matching.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django, which drives the oneshot subcommands. "
            "Install the project dependencies (poetry install) and retry."
        ) from exc
    execute_from_command_line(argv if argv is not None else sys.argv)


if __name__ == '__main__':
    main()
