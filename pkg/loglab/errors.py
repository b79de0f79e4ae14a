#!/usr/bin/env python3

#
# Created: Oct 2026
# License: Apache license
#

# =======================================================================================================
# Exception hierarchy
# Each family maps to one exit code of the command-line tool (see ExitCodes in constants.py)
# =======================================================================================================


class LoglabError(Exception):
    """Base class of all errors raised by this package."""


class ConfigError(LoglabError):
    """Invalid or incomplete configuration; detected before any heavy computation starts."""


class DataError(LoglabError):
    """The input data cannot support the requested operation."""


class ParseError(DataError):
    pass


class TaxonomyError(DataError):
    pass


class WeakLabelError(DataError):
    pass


class EvaluationError(DataError):
    pass


class NumericError(LoglabError):
    """Non-finite values showed up in the encoder or in the objective."""


class TrainingDivergedError(NumericError):
    """
    Raised when the training loss becomes NaN/inf.
    The parameters of the last epoch that completed with a finite loss travel with the exception,
    so that the caller can still persist them.
    """

    def __init__(self, message: str, last_good_state: dict | None, epoch: int):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.epoch = epoch
