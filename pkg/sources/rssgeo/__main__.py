import sys

from ._cli import cli

sys.exit(cli.main())
