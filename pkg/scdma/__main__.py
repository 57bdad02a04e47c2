import sys

from scdma.cli import main

sys.exit(main())
