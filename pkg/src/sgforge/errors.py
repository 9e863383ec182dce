"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SGFError(Exception):
    exit_code = 2


class ConfigError(SGFError):
    exit_code = 1


class DataError(SGFError):
    exit_code = 2


class ClientError(SGFError):
    exit_code = 3
