class MetricsWriter:
    """Receives the metric rows of a training run, one dict per step with the step,
    the stage, every loss term, the learning rate and the failed ray count.
    CsvMetricsWriter appends them to a log file; MetricsSummaryLogger averages them
    and forwards them unchanged"""

    def writeRows(self, rows: "list[dict]"):
        raise NotImplementedError(f"{type(self).__name__} does not accept rows")

    def close(self):
        pass

    def flush(self):
        pass


class MetricsWriterDecorator(MetricsWriter):
    """A MetricsWriter that looks at every row before handing it to output. close
    and flush first settle whatever the decorator still holds (a partial average,
    say) and then close or flush the output"""

    def __init__(self, output: MetricsWriter):
        self.output = output

    def close(self):
        self._flush()
        self.output.close()

    def flush(self):
        self._flush()
        self.output.flush()

    def _flush(self):
        """Settle the rows held since the last writeRows. Nothing by default"""

    def writeRows(self, rows: "list[dict]"):
        raise NotImplementedError(f"{type(self).__name__} does not accept rows")
