import sys

from photonic_graybox.cli import main

sys.exit(main())
