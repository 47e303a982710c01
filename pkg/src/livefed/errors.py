"""Exception hierarchy shared by every layer."""


class LiveFedError(Exception):
    pass


# store
class StoreError(LiveFedError):
    pass


class DuplicateTable(StoreError):
    pass


class DuplicateKey(StoreError):
    pass


class NotFound(StoreError):
    pass


class TypeMismatch(StoreError):
    pass


class CorruptLog(StoreError):
    pass


class TxnClosed(StoreError):
    pass


class SerializationConflict(StoreError):
    def __init__(self, message, stale=()):
        super().__init__(message)
        self.stale = list(stale)


class PinConflict(SerializationConflict):
    """A write hit rows or tables held by a prepared distributed transaction."""


# readcheck
class MalformedValidator(LiveFedError):
    pass


# sql front end
class SqlError(LiveFedError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class LexError(SqlError):
    pass


class ParseError(SqlError):
    def __init__(self, message, position=None, expected=()):
        super().__init__(message, position)
        self.expected = tuple(expected)


# query engine
class QueryError(LiveFedError):
    pass


class UnknownRelation(QueryError):
    pass


class QueryTypeError(QueryError):
    pass


class NotUpdatable(QueryError):
    pass


# federation
class SourceUnavailable(LiveFedError):
    def __init__(self, url, reason=""):
        super().__init__(f"source unavailable: {url}" + (f" ({reason})" if reason else ""))
        self.url = url


class SchemaMismatch(LiveFedError):
    pass


class DuplicateView(LiveFedError):
    pass


class MalformedUrl(LiveFedError):
    pass


class StaleRead(LiveFedError):
    pass


class StaleAfterRetry(LiveFedError):
    pass


class RemoteError(LiveFedError):
    def __init__(self, status, message=""):
        super().__init__(f"HTTP {status}: {message}")
        self.status = status


# transactions
class AlreadyFinished(LiveFedError):
    pass


class UnknownTxn(LiveFedError):
    pass
