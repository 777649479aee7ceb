import logging
import os
import sys
from datetime import datetime

from midlines.constants import LOG_DIR_ENV

LOG_FORMAT = "[%(asctime)s] %(lineno)s %(name)s - %(levelname)s - %(message)s"

LOG_FILE = f"{datetime.now().strftime('%m_%d_%Y_%H_%M_%S')}.log"

logs_path = os.environ.get(LOG_DIR_ENV) or os.path.join(os.getcwd(), "logs")

os.makedirs(logs_path, exist_ok=True)

LOG_FILE_PATH = os.path.join(logs_path, LOG_FILE)

logging.basicConfig(
    filename=LOG_FILE_PATH,
    format=LOG_FORMAT,
    level=logging.INFO
)


class ConsoleHandler(logging.Handler):
    """Writes to whatever sys.stderr is at emit time."""

    terminator = "\n"

    def emit(self, record: logging.LogRecord) -> None:
        try:
            sys.stderr.write(self.format(record) + self.terminator)
            self.flush()
        except RecursionError:
            raise
        except Exception:
            self.handleError(record)

    def flush(self) -> None:
        self.acquire()
        try:
            if hasattr(sys.stderr, "flush"):
                sys.stderr.flush()
        finally:
            self.release()


def attach_console(level: int = logging.INFO) -> logging.Handler:
    """Mirror log records to stderr (used by the CLI); a second call only adjusts the level."""
    root = logging.getLogger()
    handler = next((h for h in root.handlers if isinstance(h, ConsoleHandler)), None)
    if handler is None:
        handler = ConsoleHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    handler.setLevel(level)
    if level < root.level:
        root.setLevel(level)
    return handler


def kv(**fields) -> str:
    """Render fields as a line-oriented key=value log body."""
    return " ".join(f"{key}={value}" for key, value in fields.items())
