import sys

from interventional.cli import main

sys.exit(main())
