import sys

from simbi.cli.main import main

sys.exit(main())
