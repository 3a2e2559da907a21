import sys

from himt.cli import main

sys.exit(main())
