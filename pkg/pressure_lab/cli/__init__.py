"""Command line entry points (``pressure-lab <command> --config run.ini``)."""

from .commands import build_parser, main

__all__ = ['build_parser', 'main']
