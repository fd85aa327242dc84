import pytest

from app.core.errors import ParameterError
from app.models.schemas import FilterParams, Role
from app.services.network import compute_path, topology_to_document
from app.services.topology_builder import chain_document, chain_topology, random_document, random_topology


def test_chain_layout():
    doc = chain_document(5, FilterParams())
    ids = {n.id: n.role for n in doc.nodes}
    assert ids["nap1"] == Role.NAP and ids["nap2"] == Role.NAP
    assert ids["fw1"] == Role.FW and ids["fw2"] == Role.FW
    assert ids["tm"] == Role.TM
    assert len(doc.links) == 5


def test_two_hop_chain_shares_the_nap():
    topo = chain_topology(2, FilterParams())
    assert topo.nap_of("pub") == topo.nap_of("sub") == "nap1"


def test_chain_needs_two_hops():
    with pytest.raises(ParameterError):
        chain_document(1, FilterParams())


def test_random_topology_is_reproducible():
    a = topology_to_document(random_topology(25, FilterParams(), seed=4))
    b = topology_to_document(random_topology(25, FilterParams(), seed=4))
    c = topology_to_document(random_topology(25, FilterParams(), seed=5))
    assert a == b
    assert a != c


def test_random_topology_is_connected():
    topo = random_topology(30, FilterParams(), seed=8)
    pubs, subs = topo.users(Role.PUB), topo.users(Role.SUB)
    assert len(pubs) == len(subs) >= 2
    for pub in pubs:
        for sub in subs:
            assert compute_path(topo, pub, sub).l >= 2


def test_random_document_validation():
    with pytest.raises(ParameterError):
        random_document(1, FilterParams())
    with pytest.raises(ParameterError):
        random_document(10, FilterParams(), edge_prob=1.5)
