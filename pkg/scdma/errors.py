"""Exception hierarchy shared by every module"""


class ScdmaError(Exception):
    """Base class for toolkit errors"""


class InvalidInputError(ScdmaError, ValueError):
    """Input violates a documented precondition or invariant"""


class EnumerationLimitError(ScdmaError):
    """Exhaustive enumeration requested above the configured user cap"""

    def __init__(self, n_users: int, cap: int):
        self.n_users = n_users
        self.cap = cap
        super().__init__(
            f"enumeration over {n_users} users exceeds the cap of {cap} "
            f"(set SCDMA_ENUMERATION_CAP to raise it)"
        )
