#!/usr/bin/env python3
import sys

from dotenv import load_dotenv

# .env first, so Settings and LOG_LEVEL see it
load_dotenv(override=False)

from app.cli import run_cli                # noqa: E402
from app.config import Settings            # noqa: E402
from app.utils.logging import setup_logging  # noqa: E402


def main() -> int:
    settings = Settings()
    setup_logging(settings.log_level)
    return run_cli(settings=settings)


if __name__ == "__main__":
    sys.exit(main())
