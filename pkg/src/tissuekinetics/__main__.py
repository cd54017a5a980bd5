import sys

from tissuekinetics.cli import main

sys.exit(main())
