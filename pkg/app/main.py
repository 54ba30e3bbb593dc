import logging
import sys

from app.api.cli import cli, main
from app.core.settings import settings

logger = logging.getLogger(__name__)

__all__ = ["cli", "main"]


if __name__ == "__main__":
    logger.debug("starting %s %s", settings.APP_NAME, settings.APP_VERSION)
    sys.exit(main())
