"""Exception hierarchy shared by every tsbn module."""


class TsbnError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(TsbnError, ValueError):
    pass


class InvalidManifest(TsbnError, ValueError):
    pass


class InvalidSplit(TsbnError, ValueError):
    pass


class ConfigError(TsbnError, ValueError):
    pass


class UndefinedMetric(TsbnError, ValueError):
    pass


class IoError(TsbnError, OSError):
    pass


class CheckpointError(TsbnError, ValueError):
    pass


class DivergenceError(TsbnError, FloatingPointError):
    """A loss became NaN or infinite during training."""

    def __init__(self, message, epoch=None, batch=None, step=None):
        self.epoch = epoch
        self.batch = batch
        self.step = step
        where = []
        if epoch is not None:
            where.append(f"epoch={epoch}")
        if batch is not None:
            where.append(f"batch={batch}")
        if step is not None:
            where.append(f"step={step}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
