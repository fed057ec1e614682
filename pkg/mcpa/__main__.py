import sys

from mcpa.main import main

sys.exit(main())
