"""Entry point for ``python -m emtransport``."""

import sys

from emtransport.cli import dispatch

if __name__ == "__main__":
    sys.exit(dispatch(sys.argv[1:]))
