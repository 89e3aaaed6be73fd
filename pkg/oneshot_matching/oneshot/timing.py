import datetime
import logging
import time
from typing import Optional

logger = logging.getLogger(__name__)


class StageTimer:
    """
    Context manager that logs the start, end and duration of a named stage.

    Used around training runs and evaluations; ``elapsed`` holds the wall time
    in seconds once the block exits.
    """

    def __init__(self, stage: str, log: Optional[logging.Logger] = None) -> None:
        self.stage = stage
        self.log = log or logger
        self.elapsed = 0.0
        self._started = 0.0

    def __enter__(self) -> "StageTimer":
        start_time = datetime.datetime.now()
        self._started = time.perf_counter()
        self.log.info(f"[{start_time}] {self.stage} started")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.elapsed = time.perf_counter() - self._started
        end_time = datetime.datetime.now()
        status = "failed" if exc_type is not None else "completed"
        self.log.info(f"[{end_time}] {self.stage} {status} in {self.elapsed:.3f} sec")
