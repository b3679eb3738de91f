"""Exception hierarchy for knowprobe.

Every error raised by the library derives from :class:`KnowprobeError`, so
batch drivers can catch one type and record the reason per fact.
"""


class KnowprobeError(Exception):
    """Base class for all knowprobe errors."""


# distributions

class InvalidDistributionError(KnowprobeError, ValueError):
    pass


class SupportMismatchError(KnowprobeError, ValueError):
    pass


class InvalidInputError(KnowprobeError, ValueError):
    pass


# model client

class NetworkError(KnowprobeError):
    """Transient transport failure that survived all retries."""


class EndpointContractError(KnowprobeError):
    """The endpoint answered, but not in the documented shape."""


class BlankMarkerError(KnowprobeError, ValueError):
    pass


class KExceedsMaxError(KnowprobeError, ValueError):
    pass


class FixtureMissError(KnowprobeError, KeyError):
    pass


class ParseError(KnowprobeError, ValueError):
    """A data file (facts, templates, fixtures, classifications) is malformed."""


# instill

class RelationMismatchError(KnowprobeError, ValueError):
    pass


class MissingInstilledEndpointError(KnowprobeError, ValueError):
    pass


class SameEndpointImplicitError(KnowprobeError, ValueError):
    pass


# datasets

class DuplicateIdError(ParseError):
    pass


class TooFewTokensError(KnowprobeError, ValueError):
    pass


class EmptyPoolError(KnowprobeError, ValueError):
    pass


# eval

class InsufficientItemsError(KnowprobeError, ValueError):
    pass


class DuplicateLevelsError(KnowprobeError, ValueError):
    pass


class NExceedsKError(KnowprobeError, ValueError):
    pass


class FactIdMismatchError(KnowprobeError, ValueError):
    pass


# run configuration

class ConfigError(KnowprobeError):
    pass
