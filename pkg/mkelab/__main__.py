import sys

from mkelab.main import main

sys.exit(main())
