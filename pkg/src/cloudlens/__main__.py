import sys

from cloudlens.cli import main

sys.exit(main())
