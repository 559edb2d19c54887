from mirrorfield.train.writer.writer import (
    MetricsWriter,
    MetricsWriterDecorator,
)
from mirrorfield.train.writer.csvfile import CsvMetricsWriter
from mirrorfield.train.writer.summary import MetricsSummaryLogger

__all__ = [
    "MetricsWriter",
    "MetricsWriterDecorator",
    "CsvMetricsWriter",
    "MetricsSummaryLogger",
]
