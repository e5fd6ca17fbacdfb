import sys

from coilqa.cli import main

sys.exit(main())
