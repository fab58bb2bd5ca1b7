import logging
import time
from functools import wraps

logger = logging.getLogger(__name__)


def log_operation(name=None):
    """Decorator to log entry, elapsed time and failures of a long-running operation."""
    def decorator(f):
        label = name or f.__name__

        @wraps(f)
        def decorated_function(*args, **kwargs):
            logger.info(f"Operation started: {label}")
            start = time.perf_counter()
            try:
                result = f(*args, **kwargs)
            except Exception as e:
                logger.error(f"Error in operation {label}: {str(e)}", exc_info=True)
                raise
            logger.info(f"Operation completed: {label} ({time.perf_counter() - start:.2f}s)")
            return result

        return decorated_function

    if callable(name):
        f, name = name, None
        return decorator(f)
    return decorator
