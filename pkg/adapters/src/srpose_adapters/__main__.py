"""Allow `python3 -m srpose_adapters` as the adapter executable."""

import sys

from .cli import main

sys.exit(main())
