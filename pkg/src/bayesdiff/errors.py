"""Exception hierarchy shared by the library and the CLI."""


class BayesDiffError(Exception):
    """Base class for all package errors."""


class DomainError(BayesDiffError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvariantError(BayesDiffError):
    """A structural invariant of the model or chain state was violated."""


class StateError(BayesDiffError):
    """An operation was called on an object in an unusable state."""


class InputError(BayesDiffError):
    """Malformed or inconsistent user input (files, matrices, labels)."""


class NumericalError(BayesDiffError):
    """A non-finite quantity appeared during sampling."""


class QueryError(BayesDiffError, KeyError):
    """A summary was requested for an item it does not cover."""
