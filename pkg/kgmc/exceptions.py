"""
    kgmc.exceptions
    ~~~~~~~~~~~~~~~

    Contains the error hierarchy of the package. Every error carries the exit status the
    command line driver reports for it.
"""
import functools
import typing

#: Third-party exception type, or tuple of types, translated by :func:`~kgmc.exceptions.reraise`.
CaughtTypes = typing.Union[typing.Type[Exception], typing.Tuple[typing.Type[Exception], ...]]


class ConflationError(Exception):
    """
    Base exception for all conflation related errors.
    """
    #: Process exit status used by the command line driver.
    exit_code = 1


class ConfigError(ConflationError):
    """
    Exception raised when configuration values are missing, unknown or out of range.
    """
    exit_code = 2


class GeometryError(ConflationError):
    """
    Exception raised when a shape is degenerate or otherwise unusable.
    """


class UnknownEntityError(ConflationError):
    """
    Exception raised when an entity identifier is not present in a database or graph.
    """


class DimensionError(ConflationError):
    """
    Exception raised when matrix dimensions do not chain through the encoder.
    """


class DegenerateEmbeddingError(ConflationError):
    """
    Exception raised when a layer block of an embedding has zero norm and cannot be normalized.
    """


class TrainingDivergedError(ConflationError):
    """
    Exception raised when the training loss stops being finite.
    """
    exit_code = 4


class MatchingError(ConflationError):
    """
    Exception raised when two entities cannot be compared.
    """


class MetricError(ConflationError):
    """
    Exception raised when an evaluation measure is undefined for its input.
    """


class SceneError(ConflationError):
    """
    Exception raised when a synthetic scene cannot be generated from its spec.
    """


class SolverError(ConflationError):
    """
    Exception raised when the linear programming backend fails.
    """


class SolverTimeoutError(SolverError):
    """
    Exception raised when the branch-and-bound search exhausts its node or time budget.
    """


class InfeasibleMergeError(ConflationError):
    """
    Exception raised when no shift of the unmatched targets removes every overlap.
    """
    exit_code = 3

    def __init__(self, message: str, pair_ids: typing.Sequence[typing.Tuple[str, str]] = ()) -> None:
        super().__init__(message)
        self.pair_ids = list(pair_ids)


class TimeoutNotStartedError(ConflationError):
    """
    Exception raised when attempting to perform certain actions on :class:`~kgmc.timeouts.Timeout` instances
    that have not yet been started.
    """


def reraise(exc_to_catch: CaughtTypes, raise_as: typing.Type[ConflationError] = ConflationError,
            message: str = 'Operation failed'):
    """
    Decorator that catches specific exception types and re-raises them as
    :class:`~kgmc.exceptions.ConflationError` or the given subclass.

    :param exc_to_catch: Third-party exception type(s) to catch
    :type exc_to_catch: :class:`~Exception` or :class:`~tuple`
    :param raise_as: Package exception type to raise instead
    :type raise_as: :class:`~type`
    :param message: Prefix of the raised exception message
    :type message: :class:`~str`
    """
    def decorator(func):  # pylint: disable=missing-docstring
        @functools.wraps(func)
        def wrapper(*args, **kwargs):  # pylint: disable=missing-docstring
            try:
                return func(*args, **kwargs)
            except exc_to_catch as ex:
                raise raise_as('{} in {}: {}'.format(message, func.__name__, ex)) from ex
        return wrapper
    return decorator
