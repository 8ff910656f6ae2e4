"""Exception hierarchy shared by all prisps modules."""


class PrispsError(Exception):
    """Base class for every error raised by this package."""


# event-core
class SchemaMismatch(PrispsError, ValueError):
    pass


class InvalidTimestamp(PrispsError, ValueError):
    pass


# query language
class QueryError(PrispsError):
    pass


class ParseError(QueryError):
    def __init__(self, message, line, column, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at line {line}, column {column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class SemanticError(QueryError):
    pass


# cep engine
class UnknownLabel(PrispsError, ValueError):
    pass


class UnknownStream(PrispsError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnknownField(PrispsError, ValueError):
    pass


# dp sanitizer
class InfeasibleSchedule(PrispsError, ValueError):
    pass


class InvalidScale(PrispsError, ValueError):
    pass


class HorizonMismatch(PrispsError, ValueError):
    pass


# access control
class ConflictingRules(PrispsError, ValueError):
    pass


# policy
class UnknownNode(PrispsError, ValueError):
    pass


class UnknownPattern(PrispsError, ValueError):
    pass


# placement
class UnsupportedQueryShape(PrispsError, ValueError):
    pass


class NoFeasiblePlacement(PrispsError, RuntimeError):
    pass


class UnreachablePair(PrispsError, ValueError):
    pass


# adversary / evaluation
class DegenerateWorlds(PrispsError, ValueError):
    pass


class SingleGroup(PrispsError, ValueError):
    pass


class InsufficientData(PrispsError, ValueError):
    pass


class MissingBaseline(PrispsError, ValueError):
    pass


class NoCandidateForThreat(PrispsError, LookupError):
    pass
