import sys

from cqlab.main import main

sys.exit(main())
