"""Exception hierarchy shared across the package."""


class SendGuardError(Exception):
    pass


class MalformedMessage(SendGuardError):
    pass


class MissingFile(SendGuardError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"missing corpus file: {path}")
        self.path = str(path)


class SchemaMismatch(SendGuardError):
    pass


class DegenerateData(SendGuardError):
    pass


class InsufficientNegatives(SendGuardError):
    def __init__(self, needed: int, available: int):
        super().__init__(f"need {needed} negative examples, pools hold {available}")
        self.needed = needed
        self.available = available


class BelowMinimumHistory(SendGuardError):
    def __init__(self, user_id: str, have: int, minimum: int):
        super().__init__(f"user {user_id!r} has {have} sent emails, minimum is {minimum}")
        self.have = have
        self.minimum = minimum


class InsufficientHistory(SendGuardError):
    pass


class UntrainedProfile(SendGuardError):
    pass


class UnknownEmailId(SendGuardError, KeyError):
    pass


class UnknownStrategy(SendGuardError, ValueError):
    pass
