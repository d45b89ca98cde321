import sys

from nharm.app import main

sys.exit(main())
