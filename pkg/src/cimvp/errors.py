"""Exception hierarchy shared across the platform."""


class VpError(Exception):
    """Base class for all platform errors."""


class AddressError(VpError):
    """Access to an unmapped or out-of-range address; aborts the simulation."""


class ConfigError(VpError):
    pass


class ValidationError(ConfigError):
    pass


class ParseError(ConfigError):
    pass


class ProtocolError(VpError):
    """CIM register access that violates the controller FSM protocol."""


class DecodeError(VpError):
    pass


class AssembleError(VpError):
    pass


class DeadlockError(VpError):
    """No segment can advance and the simulation is not quiescent."""


class RunawayError(VpError):
    """A CPU exceeded its instruction budget without reaching HALT."""


class ResultMismatch(VpError):
    """Simulated benchmark output disagrees with the reference oracle."""


class IncomparableRuns(VpError):
    """compare() was given reports whose simulated domains differ."""
