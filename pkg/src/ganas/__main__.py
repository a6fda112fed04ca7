import sys

from ganas.cli import main

sys.exit(main())
