"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for simulator errors."""


class MissingPrivateKey(SimError):
    pass


class MalformedCiphertext(SimError):
    pass


class NoActiveNasConnection(SimError):
    pass


class IntegrityFailure(SimError):
    """Integrity tag did not verify; the caller must discard the message."""


class ReplayDetected(SimError):
    pass


class NoCommonAlgorithm(SimError):
    pass


class AuthFailure(SimError):
    pass


class SyncFailure(SimError):
    pass


class NoActiveContext(SimError):
    pass


class UnsupportedAttackForConfig(SimError):
    pass


class InvalidConfig(SimError):
    """Scenario validation failed.

    ``problems`` holds ``(field_path, message)`` pairs so callers can print
    one diagnostic per offending field.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.problems))
