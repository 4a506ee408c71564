import csv
import io
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple


@dataclass
class EpochRecord:
    epoch: int
    l_ce: float
    l_hsv: float
    l_coast: float
    l_conn: float
    l_sea: float
    l_robust: float
    l_surrogate: float
    grad_norm: float
    min_grad_norm: float
    val_iou: float
    val_f1: float
    val_accuracy: float


EPOCH_COLUMNS: Tuple[str, ...] = tuple(f.name for f in fields(EpochRecord))


@dataclass
class TrainSummary:
    epochs: int
    seed: int
    learning_rate: float
    final_iou: float
    final_f1: float
    final_accuracy: float
    late_iou_mean: float
    late_iou_variance: float
    variance_window: int
    lipschitz: float
    rho: float
    rho_degenerate: bool


@dataclass
class TrainReport:
    records: List[EpochRecord] = field(default_factory=list)
    summary: Optional[TrainSummary] = None

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.records]

    def min_grad_norm_at(self, epoch: int) -> float:
        """Smallest gradient norm seen in the first `epoch` epochs."""
        return self.records[epoch - 1].min_grad_norm

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(EPOCH_COLUMNS)
        for record in self.records:
            writer.writerow(_csv_value(getattr(record, c)) for c in EPOCH_COLUMNS)
        return out.getvalue()

    def summary_text(self) -> str:
        return "".join(f"{k}: {_csv_value(v)}\n" for k, v in asdict(self.summary).items())


@dataclass
class AblationRow:
    name: str
    removed: str
    seed: int
    final_iou: float
    late_iou_variance: float
    delta_iou: float
    refined_iou: Optional[float] = None


ABLATION_COLUMNS: Tuple[str, ...] = tuple(f.name for f in fields(AblationRow))


def ablation_csv(rows: List[AblationRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for row in rows:
        writer.writerow(_csv_value(getattr(row, c)) for c in ABLATION_COLUMNS)
    return out.getvalue()


@dataclass
class GradcheckReport:
    tolerance: float
    mask_errors: Dict[str, float] = field(default_factory=dict)
    theta_errors: Dict[str, float] = field(default_factory=dict)

    def failures(self) -> Dict[str, float]:
        failing = {}
        for kind, errors in (("mask", self.mask_errors), ("theta", self.theta_errors)):
            for term, error in errors.items():
                if not error < self.tolerance:
                    failing[f"{term}/{kind}"] = error
        return failing

    @property
    def passed(self) -> bool:
        return not self.failures()

    def lines(self) -> List[str]:
        out = []
        for term in self.mask_errors:
            mask_error = self.mask_errors[term]
            theta_error = self.theta_errors.get(term, float("nan"))
            ok = mask_error < self.tolerance and not theta_error >= self.tolerance
            out.append(
                f"{term:<10} dL/dM {mask_error:.3e}  dL/dtheta {theta_error:.3e}  "
                f"{'PASS' if ok else 'FAIL'}"
            )
        return out


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    seed: int
    config: dict
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = ""
    duration_seconds: float = 0.0


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
