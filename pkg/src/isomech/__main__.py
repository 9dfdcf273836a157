import sys

from isomech.cli import main

sys.exit(main())
