"""The patient-centric access-control contract.

One :class:`ContractState` per registered image. The five contract
functions validate every precondition before touching state, so a call that
raises leaves the registry exactly as it was. Each function returns its
boolean result (where it has one) together with the events it emitted.
"""

from __future__ import annotations

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass, field

from .address import Address
from .cas import Cid
from .errors import (
    AlreadyAuthorized,
    DuplicateImage,
    DuplicatePending,
    NoPendingRequest,
    NoSuchContract,
    NotOwner,
    RateLimited,
    SelfRequest,
    Unauthorized,
)

CREATE_CONTRACT = "create_contract"
REQUESTING_ACCESS = "requesting_access"
APPROVE_IRS = "approve_IRs"
TRACE_AUTHORIZATION = "trace_authorization"
REMOVE_IRS = "remove_IRs"

FUNCTIONS = (CREATE_CONTRACT, REQUESTING_ACCESS, APPROVE_IRS, TRACE_AUTHORIZATION, REMOVE_IRS)
FUNCTION_IDS = {name: i + 1 for i, name in enumerate(FUNCTIONS)}

INFO_APPROVED_BY_PATIENT = "approved by patient."
INFO_AUTHORIZED = "Authorized to access image"
INFO_DENIED = "Failed to be approved by patient"
INFO_REMOVED = "Access permission revoked by patient"
INFO_NOT_AUTHORIZED = "{description} is not authorized to access"


class Decision(enum.Enum):
    GRANT = "grant"
    DENY = "deny"


class Status(enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"
    REMOVED = "removed"


# Key order of each exported record.
EVENT_KEYS = {
    "ContractCreated": ("event", "patient", "info"),
    "Requestaccepted": ("event", "patient", "info"),
    "Approved": ("event", "requester", "info"),
    "Requestdenied": ("event", "patient", "info"),
    "Reason": ("event", "requester", "info"),
    "AuthorizationSuccess": ("event", "requester", "info", "patient"),
    "AuthorizationFailed": ("event", "requester", "info", "patient"),
    "Removed": ("event", "requester", "info", "patient"),
}


@dataclass(frozen=True)
class Event:
    name: str
    info: str
    patient: Address | None = None
    requester: Address | None = None
    block_height: int | None = None
    tx_hash: bytes | None = None
    caller: Address | None = None

    def record(self) -> OrderedDict:
        values = {"event": self.name, "info": self.info,
                  "patient": self.patient.display if self.patient else None,
                  "requester": self.requester.display if self.requester else None}
        return OrderedDict((k, values[k]) for k in EVENT_KEYS[self.name])

    def to_line(self) -> str:
        return json.dumps(self.record())

    def involves(self, address: Address) -> bool:
        return address in (self.patient, self.requester)

    def located(self, height: int, tx_hash: bytes) -> Event:
        return Event(self.name, self.info, self.patient, self.requester, height, tx_hash,
                     self.caller)

    def to_json(self) -> dict:
        return {
            "name": self.name, "info": self.info,
            "patient": self.patient.display if self.patient else None,
            "requester": self.requester.display if self.requester else None,
            "caller": self.caller.display if self.caller else None,
            "block_height": self.block_height,
            "tx_hash": self.tx_hash.hex() if self.tx_hash else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> Event:
        addr = lambda v: Address.parse(v) if v else None
        return cls(d["name"], d["info"], addr(d["patient"]), addr(d["requester"]),
                   d["block_height"], bytes.fromhex(d["tx_hash"]) if d["tx_hash"] else None,
                   addr(d.get("caller")))


@dataclass
class RequestRecord:
    requester: Address
    requester_pubkey: bytes
    notes: str
    status: Status = Status.PENDING
    requested_at: int = 0
    decided_at: int | None = None


@dataclass
class ContractState:
    owner: Address
    image_cid: Cid
    description: str
    created_at: int
    encryption_pubkey: bytes = b""
    image_signature: bytes = b""
    authorize_user: dict[Address, bool] = field(default_factory=dict)
    requests: dict[Address, RequestRecord] = field(default_factory=dict)
    share_map: dict[Address, Cid] = field(default_factory=dict)

    def authorized(self) -> set[Address]:
        return {a for a, ok in self.authorize_user.items() if ok}


@dataclass(frozen=True)
class RateLimitPolicy:
    """At most ``max_approvals`` grants per patient in any ``window`` seconds."""

    max_approvals: int = 10
    window: int = 24 * 3600

    def allows(self, history: list[int], now: int) -> bool:
        recent = sum(1 for t in history if now - t < self.window)
        return recent < self.max_approvals


class Registry:
    """All contract instances hosted on one chain."""

    def __init__(self, rate_limit: RateLimitPolicy | None = None):
        self.contracts: dict[Cid, ContractState] = {}
        self.by_owner: dict[Address, list[Cid]] = {}
        self.approvals: dict[Address, list[int]] = {}
        self.rate_limit = rate_limit

    def contract_for(self, patient: Address, image_cid: Cid | None = None) -> ContractState:
        if image_cid is not None:
            contract = self.contracts.get(image_cid)
            if contract is None or contract.owner != patient:
                raise NoSuchContract(f"no contract for image {image_cid} owned by {patient}")
            return contract
        owned = self.by_owner.get(patient)
        if not owned:
            raise NoSuchContract(f"{patient} owns no contract")
        return self.contracts[owned[-1]]

    def _owned_by(self, caller: Address, image_cid: Cid | None) -> ContractState:
        if image_cid is not None:
            contract = self.contracts.get(image_cid)
            if contract is None:
                raise NoSuchContract(f"no contract for image {image_cid}")
            if contract.owner != caller:
                raise NotOwner(f"{caller} does not own the contract for {image_cid}")
            return contract
        owned = self.by_owner.get(caller)
        if not owned:
            raise NotOwner(f"{caller} owns no contract")
        return self.contracts[owned[-1]]

    def create_contract(self, caller: Address, patient: Address, image_cid: Cid,
                        description: str, now: int, encryption_pubkey: bytes = b"",
                        image_signature: bytes = b"") -> tuple[ContractState, list[Event]]:
        if caller != patient:
            raise Unauthorized("only the patient can create a contract for their image")
        if image_cid in self.contracts:
            raise DuplicateImage(f"image {image_cid} is already registered")
        contract = ContractState(patient, image_cid, description, now,
                                 encryption_pubkey, image_signature)
        self.contracts[image_cid] = contract
        self.by_owner.setdefault(patient, []).append(image_cid)
        return contract, [Event("ContractCreated", f"Contract created for image {image_cid}",
                                patient=patient, caller=caller)]

    def requesting_access(self, caller: Address, requester: Address, patient: Address,
                          requester_pubkey: bytes, notes: str, now: int,
                          image_cid: Cid | None = None) -> list[Event]:
        if caller != requester:
            raise Unauthorized("a request must be sent from the requester's own address")
        contract = self.contract_for(patient, image_cid)
        if caller == contract.owner:
            raise SelfRequest("the owner cannot request access to their own image")
        existing = contract.requests.get(caller)
        if existing is not None and existing.status is Status.PENDING:
            raise DuplicatePending(f"{caller} already has a pending request")
        if contract.authorize_user.get(caller):
            raise AlreadyAuthorized(f"{caller} is already authorized")
        contract.requests[caller] = RequestRecord(caller, requester_pubkey, notes, requested_at=now)
        return []

    def approve_IRs(self, caller: Address, requester: Address, decision: Decision, notes: str,
                    now: int, image_cid: Cid | None = None,
                    share_cid: Cid | None = None) -> tuple[bool, list[Event]]:
        contract = self._owned_by(caller, image_cid)
        if contract.authorize_user.get(requester):
            return False, []
        record = contract.requests.get(requester)
        if record is None or record.status is not Status.PENDING:
            raise NoPendingRequest(f"{requester} has no pending request")
        if decision is Decision.GRANT:
            history = self.approvals.get(caller, [])
            if self.rate_limit is not None and not self.rate_limit.allows(history, now):
                raise RateLimited(f"{caller} reached {self.rate_limit.max_approvals} approvals "
                                  f"within {self.rate_limit.window}s")
            contract.authorize_user[requester] = True
            record.status = Status.APPROVED
            record.decided_at = now
            if share_cid is not None:
                contract.share_map[requester] = share_cid
            self.approvals.setdefault(caller, []).append(now)
            return True, [
                Event("Requestaccepted", INFO_APPROVED_BY_PATIENT, patient=caller, caller=caller),
                Event("Approved", INFO_AUTHORIZED, requester=requester, caller=caller),
            ]
        record.status = Status.DENIED
        record.decided_at = now
        return False, [
            Event("Requestdenied", INFO_DENIED, patient=caller, caller=caller),
            Event("Reason", notes, requester=requester, caller=caller),
        ]

    def trace_authorization(self, caller: Address, patient: Address, requester: Address,
                            image_cid: Cid | None = None) -> tuple[bool, list[Event]]:
        contract = self.contract_for(patient, image_cid)
        if caller not in (contract.owner, requester):
            raise Unauthorized("only the patient or the traced requester may trace")
        if contract.authorize_user.get(requester):
            return True, [Event("AuthorizationSuccess", INFO_AUTHORIZED,
                                patient=patient, requester=requester, caller=caller)]
        info = INFO_NOT_AUTHORIZED.format(description=contract.description)
        return False, [Event("AuthorizationFailed", info,
                             patient=patient, requester=requester, caller=caller)]

    def remove_IRs(self, caller: Address, requester: Address,
                   image_cid: Cid | None = None) -> tuple[bool, list[Event]]:
        contract = self._owned_by(caller, image_cid)
        if not contract.authorize_user.get(requester):
            return False, []
        contract.authorize_user[requester] = False
        contract.requests[requester].status = Status.REMOVED
        contract.share_map.pop(requester, None)
        return True, [Event("Removed", INFO_REMOVED, patient=caller, requester=requester,
                            caller=caller)]

    def snapshot(self) -> dict:
        """Canonical plain-data view of all contract state."""
        out = {}
        for cid in sorted(self.contracts):
            c = self.contracts[cid]
            out[cid.display] = {
                "owner": c.owner.display,
                "description": c.description,
                "created_at": c.created_at,
                "authorize_user": {a.display: v for a, v in sorted(c.authorize_user.items())},
                "requests": {a.display: [r.status.value, r.notes, r.requested_at, r.decided_at,
                                         r.requester_pubkey.hex()]
                             for a, r in sorted(c.requests.items())},
                "share_map": {a.display: s.display for a, s in sorted(c.share_map.items())},
            }
        return {"contracts": out,
                "approvals": {a.display: list(v) for a, v in sorted(self.approvals.items())}}


def authorization_from_events(events) -> dict[tuple[Address, Address], bool]:
    """Rebuild (patient, requester) -> authorized purely from an event log."""
    auth: dict[tuple[Address, Address], bool] = {}
    last_patient: Address | None = None
    for ev in events:
        if ev.name == "Requestaccepted":
            last_patient = ev.patient
        elif ev.name == "Approved" and last_patient is not None:
            auth[(last_patient, ev.requester)] = True
        elif ev.name == "Removed":
            auth[(ev.patient, ev.requester)] = False
    return auth
