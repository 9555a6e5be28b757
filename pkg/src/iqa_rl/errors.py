"""Exception hierarchy shared by every engine module."""


class EngineError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ConfigError(EngineError):
    pass


# -- response parsing -------------------------------------------------------

class ParseFailure(EngineError):
    """Raised by ``parse_response``; also accepted by ``format_reward``."""


class MissingTag(ParseFailure):
    pass


class BadJson(ParseFailure):
    pass


class MissingKey(ParseFailure):
    pass


class RatingOutOfRange(ParseFailure):
    pass


class BadBbox(ParseFailure):
    pass


class ProtocolViolation(ParseFailure):
    pass


# -- rewards ----------------------------------------------------------------

class InvalidSigma(EngineError):
    pass


class BatchTooSmall(EngineError):
    pass


class ZeroProbability(EngineError):
    pass


# -- policy optimisation ----------------------------------------------------

class GroupTooSmall(EngineError):
    pass


class EmptyBatch(EngineError):
    pass


class MissingDistribution(EngineError):
    pass


class SupportMismatch(EngineError):
    pass


class NoValidTokens(EngineError):
    pass


# -- curation ---------------------------------------------------------------

class NoDistributions(EngineError):
    pass


class ImageTooSmall(EngineError):
    pass


class RaterProtocolError(EngineError):
    """The rater answered something other than Pass/Fail; retry the sample."""


# -- resampling / metrics ---------------------------------------------------

class OutOfRange(EngineError):
    pass


class DegenerateStages(EngineError):
    pass


class ZeroVariance(EngineError):
    pass
