from concurrent.futures import ThreadPoolExecutor
from itertools import starmap
from typing import Any, Callable, Iterable, List, TypeVar

_T = TypeVar("_T")


class SceneScheduler:
    """
    Runs one task per scene and returns results in argument order, so any
    reduction over them is independent of how the work was spread.
    """

    def __init__(self, workers: int = 1) -> None:
        self.workers = max(1, int(workers))

    def schedule(self, task: Callable[..., _T], arguments: Iterable[Iterable[Any]]) -> List[_T]:
        if self.workers == 1:
            return list(starmap(task, arguments))
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda args: task(*args), arguments))
