import csv
import logging
import os

from mirrorfield.train.writer.writer import MetricsWriter

DEFAULT_COLUMNS = (
    "step",
    "stage",
    "variant",
    "photometric",
    "mask",
    "planeConsistency",
    "normalSupervision",
    "normalRegularizer",
    "total",
    "learningRate",
    "failedRays",
    "wallTimeS",
)


class CsvMetricsWriter(MetricsWriter):
    """Appends metric rows to a CSV file. The header is written when the file is
    created; an existing file is extended, which is what a resumed run needs.
    Rows are flushed to disk on every call of writeRows

    Args:
        path (str): Location of the CSV file
        columns (tuple[str], optional): Column order. Keys of a row which are not a\
          column are ignored, missing keys are left empty
    """

    def __init__(self, path: str, columns=DEFAULT_COLUMNS):
        self.path = path
        self.columns = tuple(columns)
        exists = os.path.exists(path) and os.path.getsize(path) > 0
        if exists:
            with open(path, "r", encoding="utf8", newline="") as f:
                header = next(csv.reader(f), None)
            if header is not None and tuple(header) != self.columns:
                raise ValueError(
                    f"Metrics log {path} has columns {header}, expected {list(self.columns)}"
                )
        self._file = open(path, "a", encoding="utf8", newline="")
        self._writer = csv.DictWriter(
            self._file, fieldnames=self.columns, extrasaction="ignore"
        )
        if not exists:
            self._writer.writeheader()
            self._file.flush()
        logging.debug(f"Writing training metrics to {path}")

    def writeRows(self, rows: "list[dict]"):
        if self._file.closed:
            raise ValueError(f"CsvMetricsWriter for {self.path} is closed")
        self._writer.writerows(rows)
        self._file.flush()

    def flush(self):
        if not self._file.closed:
            self._file.flush()
            os.fsync(self._file.fileno())

    def close(self):
        if not self._file.closed:
            self.flush()
            self._file.close()
