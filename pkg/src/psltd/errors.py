"""Exception types mapped to CLI exit codes."""


class PsltdError(Exception):
    exit_code = 1


class ConfigError(PsltdError):
    exit_code = 2


class DataError(PsltdError):
    exit_code = 3


class TrainingError(PsltdError):
    exit_code = 4
