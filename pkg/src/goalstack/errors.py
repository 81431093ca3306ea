"""Error types shared across the package.

Two failure classes matter at the boundaries: bad configuration (caller's
fault, CLI exit code 2) and contract violations (a module was fed data that
breaks its preconditions or produced data breaking its postconditions, CLI
exit code 3).
"""


class GoalstackError(Exception):
    """Base class for package errors."""


class ConfigError(GoalstackError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class ContractViolation(GoalstackError):
    """A module contract (pre/postcondition) was violated.

    ``module`` and ``op`` attribute the failure for crash diagnostics.
    """

    exit_code = 3

    def __init__(self, module: str, op: str, message: str):
        self.module = module
        self.op = op
        super().__init__(f"[{module}.{op}] {message}")


def require(condition: bool, module: str, op: str, message: str) -> None:
    if not condition:
        raise ContractViolation(module, op, message)
