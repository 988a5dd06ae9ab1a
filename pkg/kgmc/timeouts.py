"""
    kgmc.timeouts
    ~~~~~~~~~~~~~

    Contains the search budget that bounds branch-and-bound and training loops by wall-clock time
    and by a count of expensive steps (LP solves, epochs).
"""
import functools
import time

from . import exceptions, hints

__all__ = ['Timeout', 'ensure_started']


def ensure_started(func):
    """
    Decorator used to guard :class:`~kgmc.timeouts.Timeout` members that only make sense while a budget runs.
    """
    @functools.wraps(func)
    def decorator(self, *args, **kwargs):  # pylint: disable=missing-docstring
        if not self.started:
            raise exceptions.TimeoutNotStartedError(
                'Action "{}" requires timeout to be started'.format(func.__name__))
        return func(self, *args, **kwargs)
    return decorator


class Timeout:
    """
    Budget of seconds and steps consumed by a loop, tracked by context manager.

    Either limit may be `None`; a budget without limits is never exceeded.
    """

    def __init__(self, period: hints.Seconds = None, steps: hints.Steps = None) -> None:
        """
        Create a new :class:`~kgmc.timeouts.Timeout` instance.

        :param period: Wall-clock limit in seconds or `None`
        :type period: :class:`~float` or :class:`~NoneType`
        :param steps: Step limit or `None`
        :type steps: :class:`~int` or :class:`~NoneType`
        :raises :class:`~kgmc.exceptions.ConfigError`: When a limit is negative
        """
        if period is not None and period < 0:
            raise exceptions.ConfigError('Timeout period must be non-negative; got {}'.format(period))
        if steps is not None and steps < 0:
            raise exceptions.ConfigError('Step limit must be non-negative; got {}'.format(steps))
        self._period = None if period is None else float(period)
        self._steps = steps
        self._spent = 0
        self._start_time = None
        self._stop_time = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.stop()

    def __repr__(self) -> hints.Str:
        return '<{}({!r})>'.format(self.__class__.__name__, str(self))

    def __str__(self) -> hints.Str:
        limits = []
        if self._period is not None:
            limits.append('{:g} seconds'.format(self._period))
        if self._steps is not None:
            limits.append('{} steps'.format(self._steps))
        return ' or '.join(limits) or 'unlimited'

    @property
    def unlimited(self) -> hints.Bool:
        return self._period is None and self._steps is None

    @property
    def period(self) -> hints.Seconds:
        return self._period

    @property
    def steps(self) -> hints.Steps:
        return self._steps

    @property
    def spent(self) -> hints.Int:
        """
        Number of steps recorded with :meth:`~kgmc.timeouts.Timeout.spend`.
        """
        return self._spent

    @property
    def started(self) -> hints.Bool:
        return self._start_time is not None

    @property
    def stopped(self) -> hints.Bool:
        return self._stop_time is not None

    @property
    @ensure_started
    def elapsed(self) -> hints.Float:
        """
        Seconds since the budget started, frozen once stopped.

        :return: Elapsed seconds
        :rtype: :class:`~float`
        """
        end = self._stop_time if self._stop_time is not None else time.monotonic()
        return end - self._start_time

    @property
    @ensure_started
    def remaining(self) -> hints.Seconds:
        """
        Seconds left before the period runs out.

        :return: Remaining seconds or `None` without a period
        :rtype: :class:`~float` or :class:`~NoneType`
        """
        return None if self._period is None else max(0.0, self._period - self.elapsed)

    @property
    @ensure_started
    def exceeded(self) -> hints.Bool:
        """
        Check whether the period has run out or every step has been spent.

        :return: Boolean indicating whether or not the budget is exhausted
        :rtype: :class:`~bool`
        """
        if self._steps is not None and self._spent >= self._steps:
            return True
        return self._period is not None and self.remaining <= 0

    @ensure_started
    def allows(self, count: hints.Int = 1) -> hints.Bool:
        """
        Check whether ``count`` more steps fit in the budget.

        :param count: Steps about to be spent
        :type count: :class:`~int`
        :return: `False` when time has run out or the steps would pass the limit
        :rtype: :class:`~bool`
        """
        if self._steps is not None and self._spent + count > self._steps:
            return False
        return not self.exceeded

    @ensure_started
    def spend(self, count: hints.Int = 1) -> None:
        self._spent += count

    def start(self) -> None:
        """
        Start the clock and reset spent steps.

        This is called automatically by :meth:`~kgmc.timeouts.Timeout.__enter__`.
        """
        self._start_time = time.monotonic()
        self._stop_time = None
        self._spent = 0

    @ensure_started
    def stop(self) -> None:
        """
        Stop the clock; spent steps are kept.

        This is called automatically by :meth:`~kgmc.timeouts.Timeout.__exit__`.
        """
        self._stop_time = time.monotonic()
