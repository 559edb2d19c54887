import logging
import math

from mirrorfield.train.writer.writer import MetricsWriter, MetricsWriterDecorator

SUMMARY_KEYS = ("total", "photometric", "mask", "planeConsistency")


class MetricsSummaryLogger(MetricsWriterDecorator):
    """
    MetricsSummaryLogger is a MetricsWriterDecorator that averages the rows passing
    through it and logs the averages every `every` steps. The rows themselves are
    sent on to the output unchanged.
    """

    def __init__(
        self,
        output: MetricsWriter,
        every: int = 50,
        keys=SUMMARY_KEYS,
        level: int = logging.INFO,
    ):
        super().__init__(output)
        if every < 1:
            raise ValueError(f"every must be at least 1, got {every}")
        self.every = every
        self.keys = tuple(keys)
        self.level = level
        self._sums: "dict[str, float]" = {}
        self._count = 0
        self._lastStep = None
        self._failedRays = 0

    def _add(self, row: dict):
        for key in self.keys:
            value = row.get(key)
            if value is None:
                continue
            self._sums[key] = self._sums.get(key, 0.0) + float(value)
        self._failedRays += int(row.get("failedRays", 0) or 0)
        self._count += 1
        self._lastStep = row.get("step")

    def _flush(self):
        if self._count == 0:
            return
        means = ", ".join(
            f"{key}={self._sums[key] / self._count:.6g}"
            for key in self.keys
            if key in self._sums and math.isfinite(self._sums[key])
        )
        msg = f"step {self._lastStep}: mean over {self._count} steps {means}"
        if self._failedRays > 0:
            msg += f", {self._failedRays} rays hit degenerate normals"
        logging.log(self.level, msg)
        self._sums = {}
        self._count = 0
        self._failedRays = 0

    def writeRows(self, rows: "list[dict]"):
        for row in rows:
            self._add(row)
            if self._count >= self.every:
                self._flush()
        self.output.writeRows(rows)
