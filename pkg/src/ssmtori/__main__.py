"""Allow ``python -m ssmtori``."""

import sys

from .cli import main

sys.exit(main())
