"""Brute-force reference for the access-control contract.

Deliberately written as lookup tables over per-requester status, sharing
no code with pcim.pcac, so the two can be compared on random call traces.
"""

NONE, PENDING, APPROVED, DENIED, REMOVED = None, "pending", "approved", "denied", "removed"

# status -> (new status, error)
REQUEST = {
    NONE: (PENDING, None),
    PENDING: (PENDING, "DuplicatePending"),
    APPROVED: (APPROVED, "AlreadyAuthorized"),
    DENIED: (PENDING, None),
    REMOVED: (PENDING, None),
}

# (status, grant?) -> (new status, returned, events, error)
APPROVE = {
    (NONE, True): (NONE, None, [], "NoPendingRequest"),
    (PENDING, True): (APPROVED, True, ["Requestaccepted", "Approved"], None),
    (APPROVED, True): (APPROVED, False, [], None),
    (DENIED, True): (DENIED, None, [], "NoPendingRequest"),
    (REMOVED, True): (REMOVED, None, [], "NoPendingRequest"),
    (NONE, False): (NONE, None, [], "NoPendingRequest"),
    (PENDING, False): (DENIED, False, ["Requestdenied", "Reason"], None),
    (APPROVED, False): (APPROVED, False, [], None),
    (DENIED, False): (DENIED, None, [], "NoPendingRequest"),
    (REMOVED, False): (REMOVED, None, [], "NoPendingRequest"),
}

# status -> (returned, events)
TRACE = {
    NONE: (False, ["AuthorizationFailed"]),
    PENDING: (False, ["AuthorizationFailed"]),
    APPROVED: (True, ["AuthorizationSuccess"]),
    DENIED: (False, ["AuthorizationFailed"]),
    REMOVED: (False, ["AuthorizationFailed"]),
}

# status -> (new status, returned, events)
REMOVE = {
    NONE: (NONE, False, []),
    PENDING: (PENDING, False, []),
    APPROVED: (REMOVED, True, ["Removed"]),
    DENIED: (DENIED, False, []),
    REMOVED: (REMOVED, False, []),
}


class ReferenceModel:
    def __init__(self):
        self.owner = {}     # image -> owner
        self.latest = {}    # owner -> most recent image
        self.status = {}    # (image, requester) -> status

    def step(self, fn, caller, image=None, patient=None, requester=None, grant=True):
        """Returns (returned value, event names, error name or None)."""
        if fn == "create_contract":
            if caller != patient:
                return None, [], "Unauthorized"
            if image in self.owner:
                return None, [], "DuplicateImage"
            self.owner[image] = caller
            self.latest[caller] = image
            return True, ["ContractCreated"], None
        if fn == "requesting_access":
            img = self.latest.get(patient)
            if img is None:
                return None, [], "NoSuchContract"
            if caller == patient:
                return None, [], "SelfRequest"
            new, err = REQUEST[self.status.get((img, caller))]
            if err:
                return None, [], err
            self.status[(img, caller)] = new
            return None, [], None
        if fn == "approve_IRs":
            img = self.latest.get(caller)
            if img is None:
                return None, [], "NotOwner"
            new, ret, evs, err = APPROVE[(self.status.get((img, requester)), grant)]
            if err:
                return None, [], err
            self.status[(img, requester)] = new
            return ret, evs, None
        if fn == "trace_authorization":
            img = self.latest.get(patient)
            if img is None:
                return None, [], "NoSuchContract"
            if caller not in (patient, requester):
                return None, [], "Unauthorized"
            ret, evs = TRACE[self.status.get((img, requester))]
            return ret, evs, None
        if fn == "remove_IRs":
            img = self.latest.get(caller)
            if img is None:
                return None, [], "NotOwner"
            new, ret, evs = REMOVE[self.status.get((img, requester))]
            self.status[(img, requester)] = new
            return ret, evs, None
        raise ValueError(fn)

    def authorized(self):
        return {k for k, v in self.status.items() if v == APPROVED}
