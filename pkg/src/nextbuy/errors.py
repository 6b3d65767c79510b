class NextbuyError(Exception):
    """Base class for every error raised by the pipeline."""


class SchemaError(NextbuyError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class RowError(NextbuyError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(NextbuyError):
    pass


class ContractError(NextbuyError, ValueError):
    """A caller violated a documented precondition."""


class PipelineError(NextbuyError):
    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage


class AssemblyError(NextbuyError):
    pass


class TrainingError(NextbuyError):
    def __init__(self, message, param=None):
        super().__init__(message)
        self.param = param
