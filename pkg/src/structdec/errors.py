"""Exception hierarchy shared across the package."""


class StructdecError(Exception):
    """Base class for all package errors."""


# --- vocabulary / tokenization ---

class DuplicateToken(StructdecError):
    pass


class EmptyToken(StructdecError):
    pass


class MissingEos(StructdecError):
    pass


class Untokenizable(StructdecError):
    def __init__(self, text: str, position: int):
        self.position = position
        super().__init__(f"no token matches at position {position}: {text[position:position + 12]!r}")


class InvalidTokenId(StructdecError):
    pass


# --- models ---

class RemoteUnavailable(StructdecError):
    pass


class ContextTooLong(StructdecError):
    pass


class EmptyCorpus(StructdecError):
    pass


class PreconditionViolation(StructdecError):
    pass


# --- constraints ---

class UnsupportedRegexFeature(StructdecError):
    pass


class EmptyLanguage(StructdecError):
    pass


class GrammarParseError(StructdecError):
    pass


class UnproductiveStartSymbol(StructdecError):
    pass


class UnsupportedSchemaFeature(StructdecError):
    pass


class DeadState(StructdecError):
    pass


class InvalidAdvance(StructdecError):
    pass


# --- decoding ---

class ZeroFeasibleMass(StructdecError):
    pass


class DomainError(StructdecError):
    pass


class InvalidSequence(StructdecError):
    pass


class MaxLengthWithoutCompletion(StructdecError):
    pass


# --- selection / evaluation ---

class MissingExtractedAnswer(StructdecError):
    pass


class AllRealizationsInvalid(StructdecError):
    pass


class EnumerationTooLarge(StructdecError):
    pass


class ConfigError(StructdecError):
    """Bad experiment/config input surfaced to the CLI as exit code 1."""
