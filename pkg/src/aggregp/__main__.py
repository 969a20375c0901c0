import sys

from aggregp.cli import main

sys.exit(main())
