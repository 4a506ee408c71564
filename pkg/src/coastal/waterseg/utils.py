import os
import tempfile
from pathlib import Path
from typing import Callable, IO, Type, TypeVar, Union

import jsons

from .serializable import register_serializers


register_serializers()


def serialize(obj, indent: int = 2) -> str:
    return jsons.dumps(
        obj, strip_properties=True, jdkwargs={"indent": indent, "sort_keys": True}
    )


def serialize_as_dict(obj) -> dict:
    return jsons.dump(obj, strip_properties=True)


T = TypeVar("T")


def deserialize(obj: str, type: Type[T]) -> T:
    return jsons.loads(obj, type)


class WatersegError(Exception):
    """Base class for every error raised by this package."""

    pass


class InvalidGrid(WatersegError, ValueError):
    """Exception raised when a grid violates its shape or value range."""

    pass


class InvalidParameter(WatersegError, ValueError):
    """Exception raised when an operation receives an out-of-range parameter."""

    pass


class NetpbmError(WatersegError):
    """Exception raised when a Netpbm file is malformed or unsupported."""

    pass


class NumericalDivergence(WatersegError):
    """Exception raised when training produces a non-finite or exploding loss."""

    def __init__(self, term: str, epoch: int, last_finite_epoch: int, value: float):
        super().__init__(
            f"loss term `{term}` diverged at epoch {epoch} (value {value!r}); "
            f"last finite epoch {last_finite_epoch}"
        )
        self.term = term
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch
        self.value = value


class GradcheckFailure(WatersegError):
    """Exception raised when analytic and numeric gradients disagree."""

    def __init__(self, report):
        failing = ", ".join(
            f"{name} ({error:.3e})" for name, error in report.failures().items()
        )
        super().__init__(
            f"gradient check failed at tolerance {report.tolerance:g}: {failing}"
        )
        self.report = report


class ConfigError(WatersegError, ValueError):
    """Exception raised when a config file or override is invalid."""

    pass


class DatasetError(WatersegError):
    """Exception raised when a dataset on disk is missing or inconsistent."""

    pass


def require_odd_window(size: int, name: str = "window") -> int:
    if int(size) != size or size < 1 or size % 2 == 0:
        raise InvalidParameter(f"{name} must be an odd positive integer, got {size}")
    return int(size)


def require_open_unit(value: float, name: str = "threshold") -> float:
    if not 0.0 < value < 1.0:
        raise InvalidParameter(f"{name} must lie in (0, 1), got {value}")
    return float(value)


PathLike = Union[str, Path]


def atomic_write(path: PathLike, writer: Callable[[IO], None], binary: bool = False):
    """Write through a temporary sibling file and rename it over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb" if binary else "w", newline=None if binary else "") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str):
    atomic_write(path, lambda f: f.write(text))
