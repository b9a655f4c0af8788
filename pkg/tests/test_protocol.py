import random

import pytest
from hypothesis import given, settings, strategies as st

from pcim import pcac
from pcim.cas import Cid
from pcim.errors import (
    AuthFailure,
    DuplicateImage,
    NoPendingRequest,
    RateLimited,
    ScenarioError,
    Unauthorized,
)
from pcim.ledger import validate_chain
from pcim.protocol import (
    DEMO_SCRIPT,
    FIXTURE_SCRIPT,
    IMAGE_REQUESTOR,
    approve_request,
    create_contract,
    fetch_shared_image,
    format_step,
    parse_scenario,
    request_access,
    run_scenario,
    share_image_flow,
    store_image_flow,
    trace,
    remove_requestor,
)

MIB = 1 << 20


@pytest.fixture
def image():
    return random.Random(7).randbytes(MIB)


def test_store_flow(world, cast, image):
    res = store_image_flow(world, cast["patient"], cast["radiologist"], image, "Liver image")
    c = world.chain.registry.contracts[res.root_cid]
    assert c.owner == cast["patient"].address
    assert world.cas.is_pinned(res.root_cid)
    assert image not in world.cas.get_file(res.root_cid)
    names = [e.name for e in world.chain.events]
    assert names == ["ContractCreated"]


def test_radiologist_cannot_create_for_patient(world, cast):
    cid = Cid.from_digest(b"\x05" * 32)
    with pytest.raises(Unauthorized):
        create_contract(world, cast["radiologist"], cid, "x", patient=cast["patient"].address)
    assert cid not in world.chain.registry.contracts


def test_same_envelope_twice_is_duplicate(world, cast, image):
    store_image_flow(world, cast["patient"], cast["radiologist"], image, "a",
                     rng=random.Random(99))
    with pytest.raises(DuplicateImage):
        store_image_flow(world, cast["patient"], cast["radiologist"], image, "b",
                         rng=random.Random(99))


def test_share_flow(world, cast, image):
    store_image_flow(world, cast["patient"], cast["radiologist"], image, "Liver image")
    r1 = share_image_flow(world, cast["patient"], cast["ir1"])
    r2 = share_image_flow(world, cast["patient"], cast["ir2"])
    assert r1.plaintext == image and r2.plaintext == image
    assert r1.share_cid != r2.share_cid
    # ir2 cannot open ir1's copy
    from pcim.envelope import decrypt_with
    with pytest.raises(AuthFailure):
        decrypt_with(cast["ir2"].enc_keys, world.cas.get_file(r1.share_cid))


def test_removed_requestor_loses_access(world, cast, image):
    p, ir1 = cast["patient"], cast["ir1"]
    store_image_flow(world, p, cast["radiologist"], image, "Liver image")
    share_image_flow(world, p, ir1)
    assert trace(world, p, p.address, ir1.address)
    assert remove_requestor(world, p, ir1.address)
    assert not trace(world, p, p.address, ir1.address)
    with pytest.raises(Unauthorized):
        fetch_shared_image(world, ir1, p.address)
    # nothing new is produced for the removed requestor
    share_cids_before = set(world.chain.registry.contract_for(p.address).share_map.values())
    with pytest.raises(NoPendingRequest):
        approve_request(world, p, ir1.address)
    assert set(world.chain.registry.contract_for(p.address).share_map.values()) == share_cids_before


def test_rate_limit_eleventh_approval(world, cast):
    p = cast["patient"]
    store_image_flow(world, p, cast["radiologist"], b"img" * 100, "x")
    irs = [world.add_actor(f"r{i}", IMAGE_REQUESTOR) for i in range(11)]
    for ir in irs:
        request_access(world, ir, p.address)
    for ir in irs[:10]:
        world.clock.advance(60)
        approve_request(world, p, ir.address)
    world.clock.advance(60)
    with pytest.raises(RateLimited):
        approve_request(world, p, irs[10].address)
    world.clock.advance(86400)
    assert approve_request(world, p, irs[10].address)[0] is not None


def test_parse_errors():
    with pytest.raises(ScenarioError) as e:
        parse_scenario("0 a join\nx b join\n")
    assert e.value.index == 1
    with pytest.raises(ScenarioError):
        parse_scenario("5 a join\n3 b join\n")
    with pytest.raises(ScenarioError):
        parse_scenario("1 a request patient\n")
    with pytest.raises(ScenarioError):
        parse_scenario("0 a dance\n")


def test_format_roundtrip():
    steps = parse_scenario(FIXTURE_SCRIPT)
    assert parse_scenario("\n".join(format_step(s) for s in steps)) == [
        type(s)(s.at, s.actor, s.action, s.args, i + 1) for i, s in enumerate(steps)]


def test_empty_script_is_genesis_only():
    res = run_scenario("")
    assert res.chain.height == 0 and res.events == []


def test_must_flag_raises():
    script = "0 a join\n0 b join\n1 b request patient=a must=yes\n"
    with pytest.raises(ScenarioError):
        run_scenario(script)
    res = run_scenario(script.replace(" must=yes", ""))
    assert res.errors[0][1] == "NoSuchContract"


def test_fixture_run():
    res = run_scenario(FIXTURE_SCRIPT)
    assert res.chain.height == 7 and not res.errors
    assert [e.name for e in res.events] == [
        "ContractCreated", "Requestaccepted", "Approved", "Requestdenied", "Reason",
        "AuthorizationSuccess", "AuthorizationFailed", "Removed"]
    assert [e.block_height for e in res.events] == [1, 4, 4, 5, 5, 6, 6, 7]


@pytest.mark.parametrize("script", [FIXTURE_SCRIPT, DEMO_SCRIPT], ids=["fixture", "demo"])
def test_determinism(script):
    a, b = run_scenario(script, seed=3), run_scenario(script, seed=3)
    assert a.head_hash == b.head_hash
    assert [e.to_json() for e in a.events] == [e.to_json() for e in b.events]


def test_demo_chain_is_valid():
    res = run_scenario(DEMO_SCRIPT)
    assert not res.errors
    validate_chain(res.chain)


FLOW_ACTIONS = ["request", "approve", "deny", "trace", "remove"]


@settings(max_examples=25)
@given(st.lists(st.tuples(st.sampled_from(FLOW_ACTIONS), st.integers(0, 2), st.integers(0, 3)),
                max_size=25))
def test_random_scenarios_chain_agrees_with_events(ops):
    lines = ["0 p join role=patient", "0 rad join role=radiologist"]
    lines += [f"0 r{i} join role=image_requestor" for i in range(3)]
    lines.append("1 p store radiologist=rad size=2048 data_seed=1 must=yes")
    t = 1
    for action, who, dt in ops:
        t += dt
        if action == "request":
            lines.append(f"{t} r{who} request patient=p")
        else:
            lines.append(f"{t} p {action} requester=r{who}")
    res = run_scenario("\n".join(lines))
    validate_chain(res.chain)
    reg = res.chain.registry
    contract = next(iter(reg.contracts.values()))
    rebuilt = pcac.authorization_from_events(res.events)
    for i in range(3):
        addr = res.world.actor(f"r{i}").address
        assert rebuilt.get((contract.owner, addr), False) == bool(
            contract.authorize_user.get(addr))
    # sliding-window limit holds at every point
    stamps = {b.height: b.timestamp for b in res.chain.blocks}
    approved = [stamps[e.block_height] for e in res.events if e.name == "Approved"]
    for now in approved:
        assert sum(1 for a in approved if 0 <= now - a < 86400) <= 10
