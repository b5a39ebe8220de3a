"""Exception hierarchy.

Every failure carries a short machine-readable ``code`` (``dangling-reference``,
``rate-limited`` ...) that the CLI prints and tests assert on.
"""

from __future__ import annotations


class PostureError(Exception):
    code = "error"

    def __init__(self, message: str = "", *, code: str | None = None) -> None:
        if code is not None:
            self.code = code
        self.message = message or self.code
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ModelError(PostureError):
    """A mutation or lookup was rejected by the model layer."""


class InvalidModel(PostureError):
    code = "invalid-model"

    def __init__(self, message: str = "", findings=()) -> None:
        super().__init__(message)
        self.findings = list(findings)


class NotApplicable(PostureError):
    code = "not-applicable"


class CatalogError(PostureError):
    code = "malformed-catalog"

    def __init__(self, message: str = "", *, code: str | None = None, offset: int | None = None) -> None:
        super().__init__(message, code=code)
        self.offset = offset


class NvdError(PostureError):
    code = "transport-failure"


class RateLimited(NvdError):
    code = "rate-limited"

    def __init__(self, message: str = "", retry_after: float | None = None) -> None:
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponse(NvdError):
    code = "malformed-response"

    def __init__(self, message: str = "", payload: bytes = b"") -> None:
        super().__init__(message)
        self.payload = payload


class FixtureMissing(NvdError):
    code = "fixture-missing"


class PersistenceError(PostureError):
    code = "io-failure"


class ParseFailure(PersistenceError):
    code = "parse-failure"

    def __init__(self, message: str = "", line: int | None = None, column: int | None = None) -> None:
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column
