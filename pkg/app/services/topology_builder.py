"""Seeded topology documents for simulations and attack campaigns.

Generators return documents without explicit LinkIds; ``build_topology``
derives them from the document seed, so the same arguments always give
the same network.
"""
from typing import List

import networkx as nx

from app.core.errors import ParameterError
from app.models.schemas import FilterParams, LinkSpec, NodeSpec, Role, TopologyDocument
from app.services.network import Topology, build_topology
from app.utils.rng import stream


def chain_document(hops: int, params: FilterParams, seed: int = 0) -> TopologyDocument:
    """``pub - nap1 - fw1 ... - nap2 - sub`` with ``hops`` edges end to end.

    With two hops the subscriber hangs off the publisher's own NAP.
    """
    if hops < 2:
        raise ParameterError(f"a chain needs at least 2 hops (pub, NAP, sub), got {hops}")
    core = ["nap1"] + [f"fw{i}" for i in range(1, hops - 2)] + (["nap2"] if hops > 2 else [])
    nodes = [NodeSpec(id="pub", role=Role.PUB), NodeSpec(id="sub", role=Role.SUB), NodeSpec(id="tm", role=Role.TM)]
    nodes += [NodeSpec(id=n, role=Role.NAP if n.startswith("nap") else Role.FW) for n in core]
    order = ["pub"] + core + ["sub"]
    links = [LinkSpec(a=a, b=b) for a, b in zip(order, order[1:])]
    return TopologyDocument(params=params, seed=seed, nodes=nodes, links=links)


def chain_topology(hops: int, params: FilterParams, seed: int = 0) -> Topology:
    return build_topology(chain_document(hops, params, seed))


def random_document(
    n_core: int,
    params: FilterParams,
    seed: int = 0,
    edge_prob: float = 0.1,
    nap_fraction: float = 0.3,
) -> TopologyDocument:
    """Connected random core of FW/NAP nodes, one PUB and one SUB per NAP.

    The core is a random spanning tree (so it is always connected) plus a
    G(n, p) overlay for redundant routes.
    """
    if n_core < 2:
        raise ParameterError(f"the core needs at least 2 nodes, got {n_core}")
    if not 0.0 <= edge_prob <= 1.0:
        raise ParameterError(f"edge_prob must be in [0, 1], got {edge_prob}")
    rng = stream(seed, "topology")

    graph = nx.gnp_random_graph(n_core, edge_prob, seed=int(rng.integers(2**31)))
    for i in range(1, n_core):
        graph.add_edge(i, int(rng.integers(i)))

    n_naps = max(2, round(n_core * nap_fraction))
    naps = set(int(i) for i in rng.choice(n_core, size=min(n_naps, n_core), replace=False))
    name = {i: (f"nap{i}" if i in naps else f"fw{i}") for i in range(n_core)}

    nodes: List[NodeSpec] = [NodeSpec(id="tm", role=Role.TM)]
    nodes += [NodeSpec(id=name[i], role=Role.NAP if i in naps else Role.FW) for i in range(n_core)]
    links = [LinkSpec(a=name[a], b=name[b]) for a, b in sorted(tuple(sorted(e)) for e in graph.edges)]
    for i in sorted(naps):
        nodes += [NodeSpec(id=f"pub{i}", role=Role.PUB), NodeSpec(id=f"sub{i}", role=Role.SUB)]
        links += [LinkSpec(a=f"pub{i}", b=name[i]), LinkSpec(a=f"sub{i}", b=name[i])]
    return TopologyDocument(params=params, seed=seed, nodes=nodes, links=links)


def random_topology(
    n_core: int,
    params: FilterParams,
    seed: int = 0,
    edge_prob: float = 0.1,
    nap_fraction: float = 0.3,
) -> Topology:
    return build_topology(random_document(n_core, params, seed, edge_prob, nap_fraction))
