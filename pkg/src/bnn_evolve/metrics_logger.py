import csv
import os
from dataclasses import dataclass
from typing import Optional

from bnn_evolve.utils import format_ppm

METRICS_HEADER = "step,elapsed_ms,evaluations,fit_ppm,test_ppm,p_threshold"


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    elapsed_ms: int
    evaluations: int
    fit_ppm: int
    test_ppm: Optional[int]
    p_threshold: int

    def to_line(self) -> str:
        test = "" if self.test_ppm is None else str(self.test_ppm)
        return f"{self.step},{self.elapsed_ms},{self.evaluations},{self.fit_ppm},{test},{self.p_threshold}\n"


class MetricsLogger:
    """
    Append-only CSV writer for training progress.
    Every record is flushed as soon as it is written, so a crashed run
    leaves a parseable prefix behind.
    """

    def __init__(self, path: str, deterministic: bool = False, verbose: bool = True):
        self.path = os.path.abspath(path)
        self.deterministic = deterministic
        self.verbose = verbose
        self.history: list[MetricsRecord] = []

        parent = os.path.dirname(self.path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        # newline="" keeps LF endings on every platform
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        self._file.write(METRICS_HEADER + "\n")
        self._file.flush()

    def log(self, step: int, elapsed_ms: int, evaluations: int, fit_ppm: int, test_ppm: Optional[int], p_threshold: int) -> MetricsRecord:
        if self.deterministic:
            elapsed_ms = 0
        record = MetricsRecord(step, elapsed_ms, evaluations, fit_ppm, test_ppm, p_threshold)
        if self.history:
            last = self.history[-1]
            if record.step <= last.step:
                raise ValueError(f"step {record.step} does not follow step {last.step}")
            if record.elapsed_ms < last.elapsed_ms:
                raise ValueError(f"elapsed_ms went backwards: {last.elapsed_ms} -> {record.elapsed_ms}")
        self._file.write(record.to_line())
        self._file.flush()
        self.history.append(record)

        if self.verbose and test_ppm is not None:
            print(f"\n{'=' * 55}")
            print(f"  Step {step:>7d}   evaluations {evaluations:>9d}")
            print(f"       fitness subset: {format_ppm(fit_ppm)}   test: {format_ppm(test_ppm)}")
            print(f"{'=' * 55}\n")
        return record

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    def summary(self) -> str:
        tested = [r for r in self.history if r.test_ppm is not None]
        if not tested:
            return "no test evaluations recorded"
        best = max(tested, key=lambda r: r.test_ppm)
        last = tested[-1]
        return (
            f"steps={self.history[-1].step} evaluations={self.history[-1].evaluations} "
            f"final test={format_ppm(last.test_ppm)} best test={format_ppm(best.test_ppm)} (step {best.step})"
        )


def read_metrics(path: str) -> list[MetricsRecord]:
    """Parse a metrics CSV, tolerating a torn final line from an interrupted run."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or ",".join(header) != METRICS_HEADER:
            raise ValueError(f"{path} is not a metrics file (header {header})")
        for row in reader:
            if len(row) != 6:
                break
            try:
                step, elapsed, evaluations, fit, test, p = row
                records.append(MetricsRecord(int(step), int(elapsed), int(evaluations), int(fit), int(test) if test else None, int(p)))
            except ValueError:
                break
    return records


def last_test_ppm(records: list[MetricsRecord]) -> Optional[int]:
    for record in reversed(records):
        if record.test_ppm is not None:
            return record.test_ppm
    return None
