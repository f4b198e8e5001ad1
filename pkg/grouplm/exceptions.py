"""Errors raised by grouplm.

Errors carrying extra attributes pickle with them, so they cross process
pools intact. The command line maps ``InvalidInputError`` (and its
subclasses) to exit code 1 and ``NumericalFailureError`` to exit code 2.
"""


class GroupLMError(Exception):
    """Base class of every error raised by this package."""


class InvalidInputError(GroupLMError, ValueError):
    """Arguments, configurations or files that violate a precondition."""


class DatasetLoadError(InvalidInputError):
    """A dataset file breaks the schema.

    Attributes:
        record: 1-based line number of the offending record (0 is the header).
        rule: short description of the violated rule.
    """

    def __init__(self, record, rule):
        self.record = record
        self.rule = rule
        super().__init__(f'record {record}: {rule}')

    def __reduce__(self):
        return type(self), (self.record, self.rule)


class ModelFormatError(InvalidInputError):
    """A model file cannot be read back."""


class NumericalFailureError(GroupLMError, ArithmeticError):
    """Training produced a non-finite objective.

    Attributes:
        iteration: EM iteration at which the failure was detected.
        restart: index of the random restart, if known.
    """

    def __init__(self, message, iteration, restart=None):
        self.message = message
        self.iteration = iteration
        self.restart = restart
        where = f'iteration {iteration}' if restart is None else f'restart {restart}, iteration {iteration}'
        super().__init__(f'{message} ({where})')

    def __reduce__(self):
        return type(self), (self.message, self.iteration, self.restart)
