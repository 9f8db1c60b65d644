"""Exception types. Every error carries a short kind name so the CLI can
print a single machine-parsable line."""


class CofiError(Exception):
    kind = "Error"


class DimMismatch(CofiError, ValueError):
    kind = "DimMismatch"


class ShapeMismatch(CofiError, ValueError):
    kind = "ShapeMismatch"


class NonFinite(CofiError, FloatingPointError):
    kind = "NonFinite"


class BadProbability(CofiError, ValueError):
    kind = "BadProbability"


class TokenOutOfRange(CofiError, IndexError):
    kind = "TokenOutOfRange"


class SeqTooLong(CofiError, ValueError):
    kind = "SeqTooLong"


class TraceMismatch(CofiError, ValueError):
    kind = "TraceMismatch"


class UnknownSymbol(CofiError, KeyError):
    kind = "UnknownSymbol"

    def __str__(self):
        return Exception.__str__(self)


class UnknownToken(CofiError, KeyError):
    kind = "UnknownToken"

    def __str__(self):
        return Exception.__str__(self)


class BadRange(CofiError, ValueError):
    kind = "BadRange"


class BadScope(CofiError, ValueError):
    kind = "BadScope"


class BadMethod(CofiError, ValueError):
    kind = "BadMethod"


class BadRank(CofiError, ValueError):
    kind = "BadRank"


class MissingGrad(CofiError, KeyError):
    kind = "MissingGrad"

    def __str__(self):
        return Exception.__str__(self)


class MissingScore(CofiError, KeyError):
    kind = "MissingScore"

    def __str__(self):
        return Exception.__str__(self)


class ConfigError(CofiError, ValueError):
    kind = "ConfigError"
