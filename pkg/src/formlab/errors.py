"""Exception hierarchy."""


class FormlabError(Exception):
    """Base class for all formlab errors."""


class DomainError(FormlabError, ValueError):
    """An argument lies outside the admissible domain."""


class SizeError(FormlabError, ValueError):
    pass


class PositivityError(FormlabError, ValueError):
    pass


class DegenerateInputError(FormlabError, ValueError):
    pass


class PreconditionError(FormlabError, ValueError):
    pass


class NotARootError(FormlabError, ValueError):
    pass


class ConvergenceError(FormlabError, RuntimeError):
    pass


class NoBracketError(FormlabError, RuntimeError):
    pass
