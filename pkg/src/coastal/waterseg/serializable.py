from typing import List, Union

import jsons
import numpy as np


Nested = Union[float, int, List["Nested"]]


def ndarray_to_lists(array: np.ndarray) -> Nested:
    """
    Given a numpy array, returns nested lists of plain Python numbers.
    Floats survive the trip through JSON exactly because `json` writes
    the shortest repr that round-trips.
    :param array: any numeric numpy array
    :return: nested lists (or a scalar for 0-d arrays)
    """
    return np.asarray(array).tolist()


def lists_to_ndarray(value: Nested) -> np.ndarray:
    """
    Given nested lists such as `ndarray_to_lists` returns, rebuilds a
    `float64` array.
    """
    return np.asarray(value, dtype=np.float64)


def register_serializers():
    jsons.set_serializer(lambda a, **_: ndarray_to_lists(a), np.ndarray)
    jsons.set_deserializer(lambda a, cls, **_: lists_to_ndarray(a), np.ndarray)
    jsons.set_serializer(lambda f, **_: float(f), np.floating)
    jsons.set_serializer(lambda i, **_: int(i), np.integer)
    jsons.set_serializer(lambda b, **_: bool(b), np.bool_)
