import sys

from neurstt.cli import main

sys.exit(main())
