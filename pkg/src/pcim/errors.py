"""Exception hierarchy shared by every layer of the system."""


class PcimError(Exception):
    """Base class for all domain errors."""


# ledger

class InvalidKey(PcimError):
    pass


class InvalidSignature(PcimError):
    pass


class BadNonce(PcimError):
    pass


class InsufficientFunds(PcimError):
    pass


class OutOfGas(PcimError):
    pass


class UnknownFunction(PcimError):
    pass


class UnknownAccount(PcimError):
    pass


class CorruptChain(PcimError):
    """Persisted block data failed to parse or verify."""


# contract

class ContractError(PcimError):
    """A contract call reverted; the transaction still pays for its gas."""


class DuplicateImage(ContractError):
    pass


class Unauthorized(ContractError):
    pass


class NoSuchContract(ContractError):
    pass


class SelfRequest(ContractError):
    pass


class DuplicatePending(ContractError):
    pass


class AlreadyAuthorized(ContractError):
    pass


class NotOwner(ContractError):
    pass


class NoPendingRequest(ContractError):
    pass


class RateLimited(ContractError):
    pass


# content store

class NotFound(PcimError):
    def __init__(self, cid, message=None):
        self.cid = cid
        super().__init__(message or f"object {cid} not found")


class OversizeData(PcimError):
    pass


class NotACommit(PcimError):
    pass


class IntegrityError(PcimError):
    """A stored object no longer hashes to its own identifier."""


class StorageFull(PcimError):
    pass


# envelope

class WrongKeyKind(PcimError):
    pass


class AuthFailure(PcimError):
    pass


class MalformedEnvelope(AuthFailure):
    pass


# scenarios

class ScenarioError(PcimError):
    def __init__(self, index, message):
        self.index = index
        super().__init__(f"step {index}: {message}")


def by_name(name: str) -> type[PcimError]:
    """Look up an error class by name, falling back to the base class."""
    obj = globals().get(name)
    if isinstance(obj, type) and issubclass(obj, PcimError):
        return obj
    return PcimError
