"""
    kgmc.__main__
    ~~~~~~~~~~~~~

    Entry point for ``python -m kgmc``.
"""
import sys

from .cli import main

sys.exit(main())
