import sys

from ringforge.cli import main

sys.exit(main())
