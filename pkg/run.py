import sys

from fdstokes.logging_config import setup_logging
from fdstokes.main import main

# Initialize centralized logging
setup_logging()

if __name__ == "__main__":
    sys.exit(main())
