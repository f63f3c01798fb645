"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class GwsError(Exception):
    exit_code = 1


class LoadError(GwsError):
    """Malformed input file."""

    exit_code = 2

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DuplicateIdError(LoadError):
    pass


class ConfigError(GwsError):
    exit_code = 3


class ContractError(GwsError):
    """A precondition of an operation was violated by its caller."""

    exit_code = 4


class BuildError(GwsError):
    exit_code = 5


class TrainingError(GwsError):
    exit_code = 6

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class OrchestrationError(GwsError):
    exit_code = 7


class UnknownDocumentError(GwsError, KeyError):
    exit_code = 8

    def __str__(self):
        return Exception.__str__(self)
