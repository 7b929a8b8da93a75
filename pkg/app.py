import logging
import sys

from qbath.cli import main

logger = logging.getLogger(__name__)

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.error("Interrupted")
        sys.exit(130)
