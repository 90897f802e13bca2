"""measure and log execution time"""
import logging
import time
from contextlib import contextmanager
from functools import wraps
from typing import Callable, Iterator, TypeVar

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable)


def timed(message: str, level: int = logging.INFO) -> Callable[[F], F]:
    """
    Log how long each call of the decorated function took.

    `message` is a format string that sees the call's `args`, its `kwargs`, the
    function `name` and the elapsed `seconds`:

    >>> @timed("{name}({args[0]}) took {seconds:.1f}s", level=logging.DEBUG)
    ... def double(x):
    ...     return 2 * x
    >>> double(21)
    42
    """

    def decorator(function: F) -> F:
        @wraps(function)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            result = function(*args, **kwargs)
            if logger.isEnabledFor(level):
                logger.log(
                    level,
                    message.format(
                        name=function.__name__,
                        args=args,
                        kwargs=kwargs,
                        seconds=time.perf_counter() - start,
                    ),
                )
            return result

        return wrapper  # type: ignore

    return decorator


@contextmanager
def stopwatch(label: str) -> Iterator[None]:
    """
    log how long the body of a with-statement took

    >>> with stopwatch("nothing"):
    ...     pass
    """
    ts = time.perf_counter()
    yield
    logger.info("%s took %.3fs", label, time.perf_counter() - ts)
