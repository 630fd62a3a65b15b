import sys

from igcl.cli import main

sys.exit(main())
