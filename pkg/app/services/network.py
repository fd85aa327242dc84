"""Deterministic simulation of a single forwarding domain.

The topology manager (TM) computes shortest paths and ORs their LinkIds into
a ForwardingId, hands it in-process to the publisher's NAP, and the NAP
issues the publisher a credential. Packets then enter the network at the
NAP, which runs the security check once, swaps the credential for the
plaintext ForwardingId and runs the forwarding check; every later node
runs only the forwarding check.
"""
import json
import logging
import re
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from math import comb
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
from pydantic import ValidationError

from app.core.errors import ParameterError, TopologyError, Unreachable
from app.models.schemas import FilterParams, LinkSpec, NodeSpec, Role, Scheme, TopologyDocument
from app.services.attachment import (
    Accept,
    Credential,
    MasterKeys,
    RejectReason,
    issue_credential,
    rotate_key,
    security_check,
)
from app.services.bloom import ForwardingId, LinkId, build_fid, fill_factor, membership_check, new_link_id
from app.utils.rng import stream

logger = logging.getLogger(__name__)


def node_key(node_id: str):
    """Natural ordering for node ids, so that ``fw2`` sorts before ``fw10``."""
    return tuple(int(part) if i % 2 else part for i, part in enumerate(re.split(r"(\d+)", node_id)))


@dataclass(frozen=True)
class Node:
    id: str
    role: Role


@dataclass(frozen=True)
class Edge:
    """One unidirectional link and its LinkId."""
    src: str
    dst: str
    lid: LinkId

    def __repr__(self) -> str:
        return f"Edge({self.src}->{self.dst})"


class Topology:
    """A validated domain graph with a LinkId on every directed edge."""

    def __init__(self, params: FilterParams, nodes: Iterable[Node], edges: Iterable[Edge], seed: int = 0):
        self.params = params
        self.seed = seed
        self.nodes: Dict[str, Node] = {n.id: n for n in nodes}
        self.graph = nx.DiGraph()
        for node in self.nodes.values():
            self.graph.add_node(node.id, role=node.role)
        self._out: Dict[str, List[Edge]] = {n: [] for n in self.nodes}
        for edge in edges:
            self.graph.add_edge(edge.src, edge.dst, edge=edge)
            self._out[edge.src].append(edge)
        for out in self._out.values():
            out.sort(key=lambda e: node_key(e.dst))

    def role(self, node_id: str) -> Role:
        try:
            return self.nodes[node_id].role
        except KeyError:
            raise ParameterError(f"unknown node {node_id!r}") from None

    def out_edges(self, node_id: str) -> List[Edge]:
        return self._out[node_id]

    def edge(self, src: str, dst: str) -> Edge:
        return self.graph.edges[src, dst]["edge"]

    @property
    def edges(self) -> List[Edge]:
        return [e for n in sorted(self._out, key=node_key) for e in self._out[n]]

    def users(self, role: Role) -> List[str]:
        return sorted((n.id for n in self.nodes.values() if n.role == role), key=node_key)

    def nap_of(self, user: str) -> str:
        """The NAP a publisher or subscriber attaches to."""
        naps = [e.dst for e in self._out[user] if self.nodes[e.dst].role == Role.NAP]
        if len(naps) != 1:
            raise ParameterError(f"{user} is not attached to exactly one NAP")
        return naps[0]

    @cached_property
    def diameter(self) -> int:
        """Largest hop distance between two linked nodes."""
        undirected = self.graph.to_undirected(as_view=True)
        best = 0
        for component in nx.connected_components(undirected):
            if len(component) > 1:
                best = max(best, nx.diameter(undirected.subgraph(component)))
        return best

    @property
    def ttl(self) -> int:
        return 2 * self.diameter


# --- topology documents -----------------------------------------------------

def _pydantic_diagnostics(e: ValidationError) -> List[str]:
    lines = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<document>"
        lines.append(f"{loc}: {err['msg']}")
    return lines


def _parse_lid(text: str, params: FilterParams, where: str, problems: List[str]) -> Optional[LinkId]:
    try:
        lid = LinkId.from_hex(text)
        return lid.check(params)
    except ValueError as e:
        problems.append(f"{where}: {e}")
        return None


def _derived_lid(params: FilterParams, seed: int, index: int, direction: int) -> LinkId:
    return new_link_id(params, stream(seed, "lid", index, direction))


def build_topology(doc: TopologyDocument) -> Topology:
    """Validate a parsed document; every invariant violation is reported."""
    params = doc.params
    problems: List[str] = []
    nodes: Dict[str, Node] = {}
    for i, spec in enumerate(doc.nodes):
        if spec.id in nodes:
            problems.append(f"nodes.{i}.id: duplicate node id {spec.id!r}")
        nodes[spec.id] = Node(spec.id, spec.role)

    edges: List[Edge] = []
    seen = set()
    for i, link in enumerate(doc.links):
        where = f"links.{i}"
        missing = [x for x in (link.a, link.b) if x not in nodes]
        if missing:
            problems.append(f"{where}: unknown node(s) {', '.join(missing)}")
            continue
        if link.a == link.b:
            problems.append(f"{where}: self-loop on {link.a!r}")
            continue
        pair = frozenset((link.a, link.b))
        if pair in seen:
            problems.append(f"{where}: duplicate link {link.a}-{link.b}")
            continue
        seen.add(pair)

        ab = _parse_lid(link.lid_ab, params, f"{where}.lid_ab", problems) if link.lid_ab is not None else None
        ba = _parse_lid(link.lid_ba, params, f"{where}.lid_ba", problems) if link.lid_ba is not None else None
        if link.lid_ab is None:
            ab = _derived_lid(params, doc.seed, i, 0)
        if link.lid_ba is None:
            ba = _derived_lid(params, doc.seed, i, 1)
            redraw = 2
            while ab is not None and ba == ab:
                ba = _derived_lid(params, doc.seed, i, redraw)
                redraw += 1
        if ab is None or ba is None:
            continue
        if ab == ba:
            problems.append(f"{where}: both directions carry the same LinkId")
            continue
        edges.append(Edge(link.a, link.b, ab))
        edges.append(Edge(link.b, link.a, ba))

    neighbours: Dict[str, List[str]] = {n: [] for n in nodes}
    for e in edges:
        neighbours[e.src].append(e.dst)
    for node in nodes.values():
        if node.role.is_user:
            peers = neighbours[node.id]
            if len(peers) != 1 or nodes[peers[0]].role != Role.NAP:
                problems.append(f"node {node.id!r}: a {node.role.value} must attach to exactly one NAP")

    if problems:
        raise TopologyError(problems)
    return Topology(params, nodes.values(), edges, doc.seed)


def load_topology(text: str) -> Topology:
    """Parse and validate a JSON topology document."""
    try:
        doc = TopologyDocument.model_validate_json(text)
    except ValidationError as e:
        raise TopologyError(_pydantic_diagnostics(e)) from e
    topo = build_topology(doc)
    logger.debug("loaded topology: %d nodes, %d directed edges", len(topo.nodes), topo.graph.number_of_edges())
    return topo


def topology_to_document(topo: Topology) -> str:
    """Serialize with every LinkId explicit, so a reload needs no seed."""
    links = []
    for e in topo.edges:
        if node_key(e.src) < node_key(e.dst):
            back = topo.edge(e.dst, e.src)
            links.append(LinkSpec(a=e.src, b=e.dst, lid_ab=e.lid.to_hex(), lid_ba=back.lid.to_hex()))
    doc = TopologyDocument(
        params=topo.params,
        seed=topo.seed,
        nodes=[NodeSpec(id=n.id, role=n.role) for n in sorted(topo.nodes.values(), key=lambda n: node_key(n.id))],
        links=links,
    )
    return json.dumps(doc.model_dump(mode="json"), indent=2) + "\n"


# --- topology manager ---------------------------------------------------------

@dataclass(frozen=True)
class Path:
    """Ordered edges from the publisher, through its NAP, to the subscriber."""
    edges: Tuple[Edge, ...]

    def __post_init__(self):
        if not self.edges:
            raise ParameterError("a path needs at least one edge")
        for a, b in zip(self.edges, self.edges[1:]):
            if a.dst != b.src:
                raise ParameterError(f"edges {a} and {b} do not share an endpoint")

    @property
    def l(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> List[str]:
        return [self.edges[0].src] + [e.dst for e in self.edges]


def compute_path(topo: Topology, pub: str, sub: str) -> Path:
    """Shortest path by hop count; ties go to the smallest next-node id."""
    if topo.role(pub) != Role.PUB:
        raise ParameterError(f"{pub} is not a publisher")
    if topo.role(sub) != Role.SUB:
        raise ParameterError(f"{sub} is not a subscriber")
    dist = nx.single_source_shortest_path_length(topo.graph.reverse(copy=False), sub)
    if pub not in dist:
        raise Unreachable(pub, sub)
    edges = []
    current = pub
    while current != sub:
        step = min(
            (e for e in topo.out_edges(current) if dist.get(e.dst) == dist[current] - 1),
            key=lambda e: node_key(e.dst),
        )
        edges.append(step)
        current = step.dst
    return Path(tuple(edges))


def compute_tree(topo: Topology, pub: str, subs: Sequence[str]) -> Tuple[Edge, ...]:
    """Union of the publisher's paths to every subscriber, in first-seen order."""
    tree: Dict[Tuple[str, str], Edge] = {}
    for sub in subs:
        for e in compute_path(topo, pub, sub).edges:
            tree.setdefault((e.src, e.dst), e)
    return tuple(tree.values())


def build_path_fid(path: Union[Path, Sequence[Edge]], params: FilterParams) -> ForwardingId:
    edges = path.edges if isinstance(path, Path) else path
    return build_fid([e.lid for e in edges], params)


# --- packets and forwarding -------------------------------------------------

Header = Union[Credential, ForwardingId]


@dataclass(frozen=True)
class Packet:
    header: Header
    payload: bytes = b""
    ingress: bool = True
    ttl: int = 0
    arrival: Optional[Edge] = None

    def carried_over(self, edge: Edge) -> "Packet":
        return replace(self, ttl=self.ttl - 1, arrival=edge)


@dataclass(frozen=True)
class IngressPolicy:
    """How a NAP treats packets arriving from its users."""
    scheme: Scheme = Scheme.EFID_SECURED
    max_fill_drop: bool = False


@dataclass
class ForwardingCounters:
    """Instrumentation for one simulator instance."""
    security_checks: int = 0
    rejections: int = 0
    transmissions: int = 0
    ttl_drops: int = 0


@dataclass(frozen=True)
class Forwarded:
    egress: Tuple[Edge, ...]
    packet: Packet


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason


ForwardDecision = Union[Forwarded, Rejected]


def forwarding_check(topo: Topology, node: str, fid: ForwardingId, arrival: Optional[Edge]) -> Tuple[Edge, ...]:
    """Egress edges whose LinkId is in ``fid``, never back over the arrival link."""
    back = arrival.src if arrival is not None else None
    return tuple(e for e in topo.out_edges(node) if e.dst != back and membership_check(fid, e.lid))


def nap_ingress(
    pkt: Packet,
    keys: MasterKeys,
    topo: Topology,
    nap: str,
    policy: IngressPolicy = IngressPolicy(),
    counters: Optional[ForwardingCounters] = None,
) -> ForwardDecision:
    """Security check (secured scheme only), header swap, then forwarding check."""
    if not pkt.ingress:
        raise ParameterError("nap_ingress only handles packets arriving from an attached user")
    if topo.role(nap) != Role.NAP:
        raise ParameterError(f"{nap} is not a NAP")

    header = pkt.header
    if policy.scheme == Scheme.EFID_SECURED:
        if not isinstance(header, Credential):
            return _reject(RejectReason.MISSING_CREDENTIAL, counters)
        if counters is not None:
            counters.security_checks += 1
        result = security_check(header, keys, topo.params.m)
        if not isinstance(result, Accept):
            return _reject(result.reason, counters)
        fid = result.fid
    else:
        if not isinstance(header, ForwardingId) or header.m != topo.params.m:
            return _reject(RejectReason.MALFORMED, counters)
        fid = header

    if policy.max_fill_drop and fill_factor(fid) > topo.params.rho_max:
        return _reject(RejectReason.FILL_EXCEEDED, counters)

    inside = replace(pkt, header=fid, ingress=False)
    return Forwarded(forwarding_check(topo, nap, fid, pkt.arrival), inside)


def _reject(reason: RejectReason, counters: Optional[ForwardingCounters]) -> Rejected:
    if counters is not None:
        counters.rejections += 1
    return Rejected(reason)


def fw_forward(pkt: Packet, topo: Topology, node: str) -> Tuple[Edge, ...]:
    if not isinstance(pkt.header, ForwardingId):
        raise ParameterError("core nodes only forward packets carrying a plaintext ForwardingId")
    return forwarding_check(topo, node, pkt.header, pkt.arrival)


@dataclass(frozen=True)
class Propagation:
    """Everything one injected packet did inside the domain."""
    reached: FrozenSet[str]
    traversed: Tuple[Edge, ...]
    transmissions: int
    rejected: Optional[RejectReason] = None
    truncated: bool = False


def propagate(
    topo: Topology,
    origin: str,
    header: Header,
    keys: MasterKeys,
    policy: IngressPolicy = IngressPolicy(),
    counters: Optional[ForwardingCounters] = None,
    max_transmissions: int = 100_000,
    payload: bytes = b"",
) -> Propagation:
    """Send one packet from a user and follow every copy until it stops."""
    counters = counters if counters is not None else ForwardingCounters()
    access = topo.edge(origin, topo.nap_of(origin))
    start = Packet(header, payload, ingress=True, ttl=topo.ttl).carried_over(access)
    queue = deque([(access.dst, start)])
    reached = set()
    traversed = [access]
    transmissions = 1
    rejected = None
    truncated = False

    while queue:
        node, pkt = queue.popleft()
        if topo.nodes[node].role.is_user:
            if node != origin:
                reached.add(node)
            continue
        if pkt.ingress:
            decision = nap_ingress(pkt, keys, topo, node, policy, counters)
            if isinstance(decision, Rejected):
                rejected = decision.reason
                continue
            egress, pkt = decision.egress, decision.packet
        else:
            egress = fw_forward(pkt, topo, node)
        for e in egress:
            if pkt.ttl <= 0:
                counters.ttl_drops += 1
                break
            if transmissions >= max_transmissions:
                truncated = True
                queue.clear()
                break
            transmissions += 1
            traversed.append(e)
            queue.append((e.dst, pkt.carried_over(e)))

    counters.transmissions += transmissions
    if truncated:
        logger.warning("propagation from %s stopped after %d transmissions", origin, transmissions)
    return Propagation(frozenset(reached), tuple(traversed), transmissions, rejected, truncated)


# --- flows --------------------------------------------------------------------

@dataclass(frozen=True)
class DeliveryReport:
    intended: FrozenSet[str]
    actual: FrozenSet[str]
    false_positive_links: Tuple[Edge, ...]
    hops_traversed: int
    path_len: int
    rejected: Optional[RejectReason] = None
    truncated: bool = False

    @property
    def delivered(self) -> bool:
        return self.intended <= self.actual


def _flow(
    topo: Topology,
    pub: str,
    subs: Sequence[str],
    edges: Sequence[Edge],
    keys: MasterKeys,
    params: FilterParams,
    policy: IngressPolicy,
    tamper: bool,
    counters: Optional[ForwardingCounters],
    max_transmissions: int,
) -> DeliveryReport:
    fid = build_path_fid(edges, params)
    if policy.scheme == Scheme.EFID_SECURED:
        header: Header = issue_credential(fid, keys)
        if tamper:
            header = header.flip_bit(0)
    else:
        header = ForwardingId(fid.bits ^ 1, fid.m) if tamper else fid

    result = propagate(topo, pub, header, keys, policy, counters, max_transmissions)
    on_tree = set(edges)
    extra: Dict[Tuple[str, str], Edge] = {}
    for e in result.traversed:
        if e not in on_tree:
            extra.setdefault((e.src, e.dst), e)
    return DeliveryReport(
        intended=frozenset(subs),
        actual=result.reached,
        false_positive_links=tuple(extra.values()),
        hops_traversed=result.transmissions,
        path_len=len(edges),
        rejected=result.rejected,
        truncated=result.truncated,
    )


def run_flow(
    topo: Topology,
    pub: str,
    sub: str,
    keys: MasterKeys,
    params: FilterParams,
    policy: IngressPolicy = IngressPolicy(),
    tamper: bool = False,
    counters: Optional[ForwardingCounters] = None,
    max_transmissions: int = 100_000,
) -> DeliveryReport:
    """TM path computation, credential issuance, and hop-by-hop delivery of one packet."""
    path = compute_path(topo, pub, sub)
    return _flow(topo, pub, [sub], path.edges, keys, params, policy, tamper, counters, max_transmissions)


def run_multicast_flow(
    topo: Topology,
    pub: str,
    subs: Sequence[str],
    keys: MasterKeys,
    params: FilterParams,
    policy: IngressPolicy = IngressPolicy(),
    counters: Optional[ForwardingCounters] = None,
    max_transmissions: int = 100_000,
) -> DeliveryReport:
    tree = compute_tree(topo, pub, subs)
    return _flow(topo, pub, subs, tree, keys, params, policy, False, counters, max_transmissions)


def expected_false_positives(topo: Topology, path: Path, fid: ForwardingId) -> Tuple[float, float]:
    """Mean and variance of first-order false-positive links for a path.

    Counts off-path egress edges at the on-path forwarding nodes, treating
    their LinkIds as fresh random k-subsets tested against ``fid``.
    """
    k = topo.params.k
    n_set = fid.popcount
    p = comb(n_set, k) / comb(fid.m, k)
    candidates = 0
    for arrival, onward in zip(path.edges, path.edges[1:]):
        node = arrival.dst
        candidates += sum(1 for e in topo.out_edges(node) if e.dst not in (arrival.src, onward.dst))
    return candidates * p, candidates * p * (1 - p)


def first_order_false_positives(report: DeliveryReport, path: Path) -> int:
    """False-positive links that leave a node on the intended path."""
    on_path = set(path.nodes[1:-1])
    return sum(1 for e in report.false_positive_links if e.src in on_path)


class NetworkSimulator:
    """A single-threaded simulation instance with its own counters and key epoch."""

    def __init__(
        self,
        topo: Topology,
        keys: MasterKeys,
        policy: IngressPolicy = IngressPolicy(),
        max_transmissions: int = 100_000,
    ):
        self.topo = topo
        self.keys = keys
        self.policy = policy
        self.max_transmissions = max_transmissions
        self.counters = ForwardingCounters()

    def rotate(self) -> MasterKeys:
        self.keys = rotate_key(self.keys)
        logger.info("tag key rotated to epoch %d", self.keys.epoch)
        return self.keys

    def run_flow(self, pub: str, sub: str, tamper: bool = False) -> DeliveryReport:
        return run_flow(
            self.topo, pub, sub, self.keys, self.topo.params,
            self.policy, tamper, self.counters, self.max_transmissions,
        )

    def flow_pairs(self, count: int, seed: int) -> List[Tuple[str, str]]:
        """Deterministic publisher/subscriber pairs drawn from the topology's users."""
        pubs = self.topo.users(Role.PUB)
        subs = self.topo.users(Role.SUB)
        if not pubs or not subs:
            raise ParameterError("topology needs at least one publisher and one subscriber")
        rng = stream(seed, "flows")
        return [(pubs[int(rng.integers(len(pubs)))], subs[int(rng.integers(len(subs)))]) for _ in range(count)]

    def run_flows(self, pairs: Sequence[Tuple[str, str]], tamper: bool = False) -> List[DeliveryReport]:
        return [self.run_flow(pub, sub, tamper) for pub, sub in pairs]
