import json
import logging
import time
from functools import wraps
from typing import Any, Callable, Iterable, List, TypeVar

from src.utils.errors import ConfigError

# Type variables for better type hinting
F = TypeVar('F', bound=Callable[..., Any])

COORD_DECIMALS = 6
ANGLE_DECIMALS = 6
PROB_DECIMALS = 6


def timed_operation(operation_name: str) -> Callable[[F], F]:
    """
    Decorator that logs start, duration and failure of a long-running operation.

    Args:
        operation_name: Name of the operation for logging

    Returns:
        Decorated function
    """
    def decorator(func: F) -> F:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            logger = logging.getLogger(func.__module__)
            start = time.perf_counter()
            logger.debug(f"Starting {operation_name}")
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(f"Error in {operation_name} after {time.perf_counter() - start:.2f}s: {e}")
                raise
            logger.info(f"{operation_name} finished in {time.perf_counter() - start:.2f}s")
            return result

        return wrapper  # type: ignore
    return decorator


def parse_seed_range(text: str) -> List[int]:
    """
    Parse a seed argument: a single integer or an inclusive range "a..b".

    Returns:
        List of seeds in increasing order
    """
    try:
        if ".." in text:
            first, last = text.split("..", 1)
            start, stop = int(first), int(last)
            if stop < start:
                raise ConfigError(f"Empty seed range: {text}")
            return list(range(start, stop + 1))
        return [int(text)]
    except ValueError:
        raise ConfigError(f"Invalid seed range: {text}")


def round_float(value: float, ndigits: int = COORD_DECIMALS) -> float:
    """Round for serialization, normalizing -0.0 to 0.0."""
    rounded = round(float(value), ndigits)
    return 0.0 if rounded == 0 else rounded


def dumps_canonical(obj: Any) -> str:
    """Serialize to a byte-stable JSON string (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(path: str, records: Iterable[Any]) -> int:
    """Write records as canonical JSON lines. Returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps_canonical(record))
            f.write("\n")
            count += 1
    return count
