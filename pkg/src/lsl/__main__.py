import sys

from lsl.cli import main

sys.exit(main())
