"""
Exception types shared by every module.

The CLI maps these onto exit codes: InputFormatError -> 2,
ValidationError -> 3, InvariantError -> 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class InputFormatError(ToolkitError):
    """A file or document could not be parsed"""

    exit_code = 2


class ValidationError(ToolkitError, ValueError):
    """Inputs parsed fine but violate a precondition"""

    exit_code = 3


class InvariantError(ToolkitError):
    """A result breaks a property that must always hold"""

    exit_code = 4


class OsmParseError(InputFormatError):
    def __init__(self, message, line=None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class OsmRecordError(InputFormatError):
    def __init__(self, message, node_id=None):
        self.node_id = node_id
        super().__init__(message)


class DegenerateMeanError(ValidationError):
    pass


class UnknownQueryError(ValidationError):
    pass


class ModelRequiredError(ValidationError):
    pass
