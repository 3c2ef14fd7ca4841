"""Exception hierarchy shared across the engine."""


class ZeroGenError(Exception):
    """Base class for all engine errors."""


class ConfigError(ZeroGenError):
    """Invalid configuration, control set, or input file. CLI exit code 2."""


class OracleError(ZeroGenError):
    """An oracle (embedding table, LM, or bridge) failed or refused a query.

    CLI exit code 3.
    """


class BridgeProtocolError(OracleError):
    """The remote bridge returned a malformed or contract-violating response."""
