import sys

from pycrowdsimpy.Cli import main

sys.exit(main())
