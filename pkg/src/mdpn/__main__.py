import sys

from mdpn.cli import main

sys.exit(main())
