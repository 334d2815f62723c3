import sys

from pesentinel.cli import main

sys.exit(main())
