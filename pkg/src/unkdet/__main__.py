"""Allow ``python -m unkdet`` to invoke the command line."""

import sys

from .cli import main

sys.exit(main())
