import json
from pathlib import Path
from typing import Generic, List, Optional, Tuple, TypeVar

import numpy as np
import logging as log

from .utils import serialize_as_dict


C = TypeVar("C")


class MaskStep(Generic[C]):
    """One stage of an ordered mask transform, configured by `C`."""

    name: str

    def skip(self, config: C) -> bool:
        return False

    def apply(self, mask: np.ndarray, config: C) -> np.ndarray:
        raise NotImplementedError()


class Recorder:
    """Append one JSON object per event to `events.jsonl` in a run directory."""

    def __init__(self, output_path: Path):
        self.output_path = Path(output_path) / "events.jsonl"

    def __enter__(self):
        self.output_path.parent.mkdir(parents=True, exist_ok=True)
        self.file = open(self.output_path, "w")
        return self

    def __exit__(self, type, value, traceback):
        self.file.close()

    def record(self, source: str, event: str, payload):
        json.dump(
            {"source": source, "event": event, "payload": serialize_as_dict(payload)},
            self.file,
            sort_keys=True,
        )
        self.file.write("\n")


class MaskPipeline(Generic[C]):
    def __init__(self, steps: List[MaskStep[C]], recorder: Optional[Recorder] = None) -> None:
        self.steps = steps
        self.recorder = recorder

    def run_once(self, mask: np.ndarray, config: C) -> Tuple[np.ndarray, List[str]]:
        applied = []
        for step in self.steps:
            if step.skip(config):
                log.debug(f"{self.__class__.__name__} skipping step `{step.name}`")
                continue
            changed = step.apply(mask, config)
            if self.recorder:
                self.recorder.record(
                    self.__class__.__name__,
                    step.name,
                    {"changed_pixels": int(np.count_nonzero(changed != mask))},
                )
            mask = changed
            applied.append(step.name)
        return mask, applied

    def run_to_fixed_point(self, mask: np.ndarray, config: C, max_passes: int) -> np.ndarray:
        for _ in range(max_passes):
            refined, _ = self.run_once(mask, config)
            if np.array_equal(refined, mask):
                return refined
            mask = refined
        log.warning(
            f"{self.__class__.__name__} did not reach a fixed point in {max_passes} passes"
        )
        return mask
