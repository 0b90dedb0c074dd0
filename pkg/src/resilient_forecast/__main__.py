import sys

from resilient_forecast.cli import main

sys.exit(main())
