import sys

from irisloc.cli import main

sys.exit(main())
