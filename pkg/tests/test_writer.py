import csv
import logging

import pytest

from mirrorfield.train.writer import CsvMetricsWriter, MetricsSummaryLogger, MetricsWriter


class Collect(MetricsWriter):
    def __init__(self):
        self.rows = []
        self.closed = False

    def writeRows(self, rows):
        self.rows.extend(rows)

    def close(self):
        self.closed = True


def row(step: int, total: float) -> dict:
    return {"step": step, "stage": 1, "total": total, "photometric": total, "failedRays": 0}


def readCsv(path) -> "list[dict]":
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_csvWriterAppendsToAnExistingLog(tmp_path):
    path = str(tmp_path / "metrics.csv")
    writer = CsvMetricsWriter(path)
    writer.writeRows([row(0, 1.0), row(1, 0.5)])
    writer.close()
    writer = CsvMetricsWriter(path)
    writer.writeRows([row(2, 0.25)])
    writer.close()
    rows = readCsv(path)
    assert [r["step"] for r in rows] == ["0", "1", "2"]
    assert rows[2]["total"] == "0.25"
    # Columns missing from a row stay empty
    assert rows[0]["mask"] == ""


def test_csvWriterIgnoresUnknownKeys(tmp_path):
    path = str(tmp_path / "metrics.csv")
    writer = CsvMetricsWriter(path, columns=("step", "total"))
    writer.writeRows([{**row(0, 1.0), "extra": 3}])
    writer.close()
    with open(path) as f:
        assert f.read().splitlines() == ["step,total", "0,1.0"]


def test_csvWriterRejectsAnotherHeader(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("step,loss\n0,1.0\n")
    with pytest.raises(ValueError):
        CsvMetricsWriter(str(path))


def test_closedCsvWriterRaises(tmp_path):
    writer = CsvMetricsWriter(str(tmp_path / "metrics.csv"))
    writer.close()
    with pytest.raises(ValueError):
        writer.writeRows([row(0, 1.0)])


def test_summaryLoggerAveragesAndForwards(caplog):
    output = Collect()
    logger = MetricsSummaryLogger(output, every=2)
    with caplog.at_level(logging.INFO):
        logger.writeRows([row(0, 1.0), row(1, 3.0), row(2, 5.0)])
    assert len(output.rows) == 3
    messages = [r.getMessage() for r in caplog.records]
    assert messages == ["step 1: mean over 2 steps total=2, photometric=2"]
    caplog.clear()
    with caplog.at_level(logging.INFO):
        logger.close()
    assert [r.getMessage() for r in caplog.records] == [
        "step 2: mean over 1 steps total=5, photometric=5"
    ]
    assert output.closed


def test_summaryLoggerReportsFailedRays(caplog):
    logger = MetricsSummaryLogger(Collect(), every=1, keys=("total",))
    with caplog.at_level(logging.INFO):
        logger.writeRows([{**row(0, 1.0), "failedRays": 3}])
    assert caplog.records[0].getMessage().endswith("3 rays hit degenerate normals")


def test_summaryLoggerNeedsAPositivePeriod():
    with pytest.raises(ValueError):
        MetricsSummaryLogger(Collect(), every=0)


def test_flushLogsThePartialMeanAndFlushesTheOutput(caplog):
    flushed = []

    class Flushing(Collect):
        def flush(self):
            flushed.append(len(self.rows))

    logger = MetricsSummaryLogger(Flushing(), every=10, keys=("total",))
    with caplog.at_level(logging.INFO):
        logger.writeRows([row(0, 2.0), row(1, 4.0)])
        assert caplog.records == []
        logger.flush()
    assert [r.getMessage() for r in caplog.records] == ["step 1: mean over 2 steps total=3"]
    assert flushed == [2]


def test_baseWriterAcceptsNoRows():
    with pytest.raises(NotImplementedError):
        MetricsWriter().writeRows([row(0, 1.0)])
