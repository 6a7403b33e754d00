import sys

from bvlattice.cli import main

sys.exit(main())
