import sys

from rdelab.cli import main

sys.exit(main())
