import sys

from bspsa.cli import main

sys.exit(main())
