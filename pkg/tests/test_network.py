import json
import math

import pytest

from app.core.errors import FillFactorExceeded, ParameterError, TopologyError, Unreachable
from app.models.schemas import FilterParams, Role, Scheme
from app.services.attachment import MasterKeys, RejectReason, issue_credential
from app.services.bloom import saturated_fid
from app.services.network import (
    Forwarded,
    ForwardingCounters,
    IngressPolicy,
    NetworkSimulator,
    Packet,
    Rejected,
    build_path_fid,
    compute_path,
    compute_tree,
    expected_false_positives,
    first_order_false_positives,
    forwarding_check,
    fw_forward,
    load_topology,
    nap_ingress,
    propagate,
    run_flow,
    run_multicast_flow,
    topology_to_document,
)
from app.services.topology_builder import chain_topology, random_topology

STAR = {
    "params": {"m": 256, "k": 5, "rho_max": 0.5},
    "seed": 3,
    "nodes": [
        {"id": "pub", "role": "PUB"},
        {"id": "nap", "role": "NAP"},
        {"id": "fw", "role": "FW"},
        {"id": "nap2", "role": "NAP"},
        {"id": "sub1", "role": "SUB"},
        {"id": "sub2", "role": "SUB"},
        {"id": "tm", "role": "TM"},
    ],
    "links": [
        {"a": "pub", "b": "nap"},
        {"a": "nap", "b": "fw"},
        {"a": "fw", "b": "nap2"},
        {"a": "nap2", "b": "sub1"},
        {"a": "nap", "b": "sub2"},
    ],
}


@pytest.fixture
def star():
    return load_topology(json.dumps(STAR))


def test_load_topology_derives_lids_from_seed(star):
    again = load_topology(json.dumps(STAR))
    assert [e.lid for e in star.edges] == [e.lid for e in again.edges]
    assert len(star.edges) == 10
    assert all(e.lid.popcount == 5 for e in star.edges)
    assert star.edge("nap", "fw").lid != star.edge("fw", "nap").lid


def test_load_topology_reports_every_problem():
    doc = json.loads(json.dumps(STAR))
    doc["links"] += [
        {"a": "fw", "b": "ghost"},
        {"a": "fw", "b": "fw"},
        {"a": "pub", "b": "fw"},
        {"a": "nap", "b": "fw"},
    ]
    with pytest.raises(TopologyError) as exc:
        load_topology(json.dumps(doc))
    text = "\n".join(exc.value.diagnostics)
    assert "ghost" in text
    assert "self-loop" in text
    assert "duplicate link" in text
    assert "exactly one NAP" in text


def test_load_topology_schema_errors():
    with pytest.raises(TopologyError) as exc:
        load_topology('{"nodes": []}')
    assert any("params" in d for d in exc.value.diagnostics)
    with pytest.raises(TopologyError):
        load_topology("not json")


def test_explicit_lids_are_validated():
    doc = json.loads(json.dumps(STAR))
    doc["links"][1]["lid_ab"] = "00" * 31 + "07"
    with pytest.raises(TopologyError) as exc:
        load_topology(json.dumps(doc))
    assert any("links.1.lid_ab" in d for d in exc.value.diagnostics)


def test_document_round_trip(star):
    text = topology_to_document(star)
    again = load_topology(text)
    assert [(e.src, e.dst, e.lid) for e in again.edges] == [(e.src, e.dst, e.lid) for e in star.edges]
    assert all(link["lid_ab"] for link in json.loads(text)["links"])


def test_compute_path(chain):
    topo = chain(4)
    path = compute_path(topo, "pub", "sub")
    assert path.l == 4
    assert path.nodes == ["pub", "nap1", "fw1", "nap2", "sub"]


def test_compute_path_breaks_ties_by_natural_node_order():
    doc = {
        "params": {"m": 256, "k": 5},
        "nodes": [
            {"id": i, "role": r}
            for i, r in [("pub", "PUB"), ("nap1", "NAP"), ("fw10", "FW"), ("fw2", "FW"), ("nap2", "NAP"), ("sub", "SUB")]
        ],
        "links": [
            {"a": "pub", "b": "nap1"},
            {"a": "nap1", "b": "fw10"},
            {"a": "nap1", "b": "fw2"},
            {"a": "fw10", "b": "nap2"},
            {"a": "fw2", "b": "nap2"},
            {"a": "nap2", "b": "sub"},
        ],
    }
    path = compute_path(load_topology(json.dumps(doc)), "pub", "sub")
    assert path.nodes == ["pub", "nap1", "fw2", "nap2", "sub"]


def test_compute_path_errors(star):
    with pytest.raises(ParameterError):
        compute_path(star, "sub1", "sub2")
    doc = json.loads(json.dumps(STAR))
    doc["links"] = [link for link in doc["links"] if link != {"a": "fw", "b": "nap2"}]
    with pytest.raises(Unreachable):
        compute_path(load_topology(json.dumps(doc)), "pub", "sub1")


def test_clean_chain_delivery(chain, keys, params):
    topo = chain(4)
    report = run_flow(topo, "pub", "sub", keys, params)
    assert report.delivered
    assert report.false_positive_links == ()
    assert report.hops_traversed == 4
    assert report.path_len == 4
    assert report.rejected is None


def test_two_hop_chain(chain, keys, params):
    report = run_flow(chain(2), "pub", "sub", keys, params)
    assert report.delivered
    assert report.hops_traversed == 2


def test_tampered_credential_is_dropped(chain, keys, params):
    report = run_flow(chain(4), "pub", "sub", keys, params, tamper=True)
    assert not report.delivered
    assert report.rejected == RejectReason.BAD_TAG
    assert report.hops_traversed == 1


def test_plain_lipsin_delivery(chain, keys, params):
    report = run_flow(chain(5), "pub", "sub", keys, params, IngressPolicy(Scheme.LIPSIN_PLAIN))
    assert report.delivered


def test_nap_ingress(chain, keys, params):
    topo = chain(4)
    path = compute_path(topo, "pub", "sub")
    fid = build_path_fid(path, params)
    access = topo.edge("pub", "nap1")
    pkt = Packet(issue_credential(fid, keys), arrival=access, ttl=topo.ttl)
    counters = ForwardingCounters()

    decision = nap_ingress(pkt, keys, topo, "nap1", counters=counters)
    assert isinstance(decision, Forwarded)
    assert [e.dst for e in decision.egress] == ["fw1"]
    assert decision.packet.header == fid
    assert counters.security_checks == 1

    plain = Packet(fid, arrival=access)
    assert nap_ingress(plain, keys, topo, "nap1", counters=counters) == Rejected(RejectReason.MISSING_CREDENTIAL)
    assert counters.rejections == 1
    with pytest.raises(ParameterError):
        nap_ingress(pkt, keys, topo, "fw1")


def test_max_fill_drop(chain, keys, params):
    topo = chain(3)
    pkt = Packet(saturated_fid(params), arrival=topo.edge("pub", "nap1"))
    policy = IngressPolicy(Scheme.LIPSIN_PLAIN, max_fill_drop=True)
    assert nap_ingress(pkt, keys, topo, "nap1", policy) == Rejected(RejectReason.FILL_EXCEEDED)
    assert isinstance(nap_ingress(pkt, keys, topo, "nap1", IngressPolicy(Scheme.LIPSIN_PLAIN)), Forwarded)


def test_forwarding_suppresses_the_arrival_link(chain, params):
    topo = chain(4)
    fid = saturated_fid(params)
    arrival = topo.edge("nap1", "fw1")
    assert [e.dst for e in forwarding_check(topo, "fw1", fid, arrival)] == ["nap2"]
    assert [e.dst for e in forwarding_check(topo, "fw1", fid, None)] == ["nap1", "nap2"]
    pkt = Packet(fid, ingress=False, arrival=arrival)
    assert [e.dst for e in fw_forward(pkt, topo, "fw1")] == ["nap2"]


def test_fw_forward_needs_plaintext(chain, keys, params):
    topo = chain(4)
    fid = build_path_fid(compute_path(topo, "pub", "sub"), params)
    with pytest.raises(ParameterError):
        fw_forward(Packet(issue_credential(fid, keys), ingress=False), topo, "fw1")


def test_ttl_is_twice_the_diameter(chain):
    assert chain(4).ttl == 8


def test_saturated_flood_terminates(chain, keys, params):
    topo = chain(4)
    result = propagate(topo, "pub", saturated_fid(params), keys, IngressPolicy(Scheme.LIPSIN_PLAIN))
    assert result.reached == frozenset({"sub"})
    assert not result.truncated


def test_transmission_cap_truncates(chain, keys, params):
    topo = chain(6)
    result = propagate(
        topo, "pub", saturated_fid(params), keys, IngressPolicy(Scheme.LIPSIN_PLAIN), max_transmissions=3
    )
    assert result.truncated
    assert result.transmissions == 3
    assert "sub" not in result.reached


def test_path_too_full_to_encode(keys):
    params = FilterParams(m=256, k=5, rho_max=0.05)
    topo = chain_topology(6, params)
    with pytest.raises(FillFactorExceeded):
        run_flow(topo, "pub", "sub", keys, params)


def test_multicast_tree(star, keys):
    tree = compute_tree(star, "pub", ["sub1", "sub2"])
    assert len(tree) == 5
    report = run_multicast_flow(star, "pub", ["sub1", "sub2"], keys, star.params)
    assert report.delivered
    assert report.actual >= {"sub1", "sub2"}


def test_expected_false_positives_on_a_chain(chain, params):
    topo = chain(5)
    path = compute_path(topo, "pub", "sub")
    assert expected_false_positives(topo, path, build_path_fid(path, params)) == (0.0, 0.0)


def _false_positive_totals(topologies: int):
    params = FilterParams(m=64, k=3, rho_max=1.0)
    keys = MasterKeys.from_seed(0)
    policy = IngressPolicy(Scheme.LIPSIN_PLAIN)
    observed = 0
    mean = var = 0.0
    for seed in range(topologies):
        topo = random_topology(20, params, seed=seed, edge_prob=0.4)
        sim = NetworkSimulator(topo, keys, policy)
        (pub, sub), = sim.flow_pairs(1, seed)
        path = compute_path(topo, pub, sub)
        report = sim.run_flow(pub, sub)
        assert report.delivered
        observed += first_order_false_positives(report, path)
        m, v = expected_false_positives(topo, path, build_path_fid(path, params))
        mean += m
        var += v
    return observed, mean, var


def test_false_positives_on_dense_topologies_match_the_model():
    observed, mean, var = _false_positive_totals(1_000)
    assert mean > 20
    assert abs(observed - mean) <= 3 * math.sqrt(var)


@pytest.mark.slow
def test_false_positives_on_dense_topologies_full_size():
    observed, mean, var = _false_positive_totals(10_000)
    assert abs(observed - mean) <= 3 * math.sqrt(var)


def test_simulator_counts_and_rotates(keys):
    topo = random_topology(15, FilterParams(), seed=2)
    sim = NetworkSimulator(topo, keys)
    pairs = sim.flow_pairs(10, seed=2)
    assert pairs == sim.flow_pairs(10, seed=2)
    reports = sim.run_flows(pairs)
    assert all(r.delivered for r in reports)
    assert sim.counters.security_checks == 10
    assert sim.rotate().epoch == 1
    assert all(r.delivered for r in sim.run_flows(pairs))


def _no_false_negatives(count: int):
    failures = []
    for seed in range(count):
        n_core = 10 + seed % 41
        topo = random_topology(n_core, FilterParams(), seed=seed)
        sim = NetworkSimulator(topo, MasterKeys.from_seed(seed))
        (pub, sub), = sim.flow_pairs(1, seed)
        try:
            report = sim.run_flow(pub, sub)
        except FillFactorExceeded:
            continue
        if not report.delivered:
            failures.append(seed)
    return failures


def test_no_false_negatives_on_random_topologies():
    assert _no_false_negatives(100) == []


@pytest.mark.slow
def test_no_false_negatives_full_size():
    assert _no_false_negatives(1000) == []


def test_users_have_roles(star):
    assert star.users(Role.SUB) == ["sub1", "sub2"]
    assert star.nap_of("sub1") == "nap2"
