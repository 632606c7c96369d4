import sys

from .sweep_cli import main

sys.exit(main())
