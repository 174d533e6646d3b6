"""Exception hierarchy shared by every module.

Three bases map onto the CLI exit codes: UserError -> 1, DataError -> 2,
NumericalDivergence -> 3.
"""


class KidogoError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UserError(KidogoError):
    """Bad configuration or invocation."""

    exit_code = 1


class DataError(KidogoError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class ConfigInvalid(UserError):
    pass


class TemplateInvalid(UserError):
    pass


class TemplateMissing(UserError):
    pass


class TrainingDataEmpty(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class VocabMismatch(DataError):
    pass


class CorpusMismatch(DataError):
    pass


class PairInvalid(DataError):
    pass


class LabelUnknown(DataError):
    pass


class ContextTooLong(DataError):
    pass


class NumericalDivergence(KidogoError):
    """Loss or update became non-finite."""

    exit_code = 3
