import functools
import logging
import time

logger = logging.getLogger(__name__)


def timer(func):
    """Log the runtime of the decorated function"""

    @functools.wraps(func)
    def wrapper_timer(*args, **kwargs):
        start_time = time.perf_counter()
        value = func(*args, **kwargs)
        run_time = time.perf_counter() - start_time
        logging.getLogger(func.__module__).info(f"Finished {func.__name__!r} in {run_time:.4f} secs")
        return value

    return wrapper_timer
