import logging
from typing import List, Optional, Union

from app.core.config import Settings, get_settings
from app.core.errors import FillFactorExceeded, ParameterError
from app.models.schemas import (
    AnalyzeRequest,
    AnalyzeRow,
    AttackMode,
    AttackRequest,
    AttackRow,
    CorrelationRow,
    FilterParams,
    FlowRow,
    Scheme,
    SweepRequest,
    SweepRow,
)
from app.services.attachment import TAG_WIDTHS, MasterKeys
from app.services.attacks import (
    AdversaryConfig,
    attack_probability,
    birthday_attempts,
    run_brute_force,
    run_correlation_probe,
    run_replay,
    scheme_sweep,
)
from app.services.bloom import expected_fill, false_positive_prob
from app.services.network import (
    IngressPolicy,
    NetworkSimulator,
    Topology,
    build_topology,
    compute_path,
    topology_to_document,
)
from app.services.topology_builder import chain_document, chain_topology, random_document

logger = logging.getLogger(__name__)


def _l_range(l_min: int, l_max: int) -> range:
    if l_min < 1 or l_max < l_min:
        raise ParameterError(f"invalid hop range {l_min}..{l_max}")
    return range(l_min, l_max + 1)


def _check_hash_bits(hash_bits: int) -> None:
    if hash_bits not in TAG_WIDTHS:
        raise ParameterError(f"hash_bits must be one of {TAG_WIDTHS}, got {hash_bits}")


class ExperimentService:
    """Runs the analytic tables, simulations and attack campaigns for the CLI and the API."""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    def analyze(self, request: AnalyzeRequest) -> List[AnalyzeRow]:
        """
        Closed-form attack table, one row per hop count.

        Args:
            request: geometry, tag width, target p_sc and hop range

        Returns:
            AnalyzeRow list; seed-independent
        """
        _check_hash_bits(request.hash_bits)
        params = FilterParams(m=request.m, k=request.k, rho_max=1.0)
        rho = request.rho_m if request.rho_m is not None else expected_fill(params.m, params.k, request.n_lids)
        attempts = birthday_attempts(2 ** request.hash_bits, request.p_sc)
        return [
            AnalyzeRow(
                l=l,
                m=params.m,
                k=params.k,
                n_lids=request.n_lids,
                rho_m=rho,
                hash_bits=request.hash_bits,
                p_sc=request.p_sc,
                p_fw=false_positive_prob(rho, params.k, l),
                p_a=attack_probability(request.p_sc, rho, params.k, l),
                attempts_for_p_sc=attempts,
            )
            for l in _l_range(request.l_min, request.l_max)
        ]

    def sweep(self, request: SweepRequest, workers: int = 1) -> List[SweepRow]:
        """Attack probability per hop count for the secured scheme and plain LIPSIN."""
        return scheme_sweep(
            FilterParams(m=request.m, k=request.k, rho_max=1.0),
            FilterParams(m=request.lipsin_m, k=request.k, rho_max=1.0),
            request.p_sc,
            _l_range(request.l_min, request.l_max),
            n_lids=request.n_lids,
            rho_m=request.rho_m,
            empirical_trials=request.trials,
            seed=request.seed,
            workers=workers,
            min_expected=self.settings.empirical_min_expected,
        )

    def simulate(
        self,
        topo: Topology,
        flows: int = 1,
        seed: int = 0,
        scheme: Scheme = Scheme.EFID_SECURED,
        hash_bits: int = 64,
        epochs: int = 1,
        tamper: bool = False,
        max_fill_drop: bool = False,
    ) -> List[FlowRow]:
        """
        Deliver ``flows`` seeded publisher/subscriber flows in each of ``epochs`` key epochs.

        The tag key rotates between epochs; every flow is issued and checked
        within one epoch.
        """
        if flows < 1 or epochs < 1:
            raise ParameterError(f"flows and epochs must be >= 1, got {flows} and {epochs}")
        keys = MasterKeys.from_seed(seed, hash_bits)
        sim = NetworkSimulator(topo, keys, IngressPolicy(scheme, max_fill_drop), self.settings.max_transmissions)
        pairs = sim.flow_pairs(flows, seed)

        rows: List[FlowRow] = []
        for epoch in range(epochs):
            if epoch:
                sim.rotate()
            for pub, sub in pairs:
                try:
                    report = sim.run_flow(pub, sub, tamper)
                except FillFactorExceeded as e:
                    logger.warning("flow %d %s->%s not encodable: %s", len(rows), pub, sub, e)
                    path = compute_path(topo, pub, sub)
                    rows.append(FlowRow(
                        flow_id=len(rows), pub=pub, sub=sub, path_len=path.l,
                        delivered=False, false_positive_links=0, hops=0,
                    ))
                    continue
                rows.append(FlowRow(
                    flow_id=len(rows),
                    pub=pub,
                    sub=sub,
                    path_len=report.path_len,
                    delivered=report.delivered,
                    false_positive_links=len(report.false_positive_links),
                    hops=report.hops_traversed,
                ))

        c = sim.counters
        logger.info(
            "%d/%d flows delivered; %d security checks, %d rejections, %d transmissions",
            sum(r.delivered for r in rows), len(rows), c.security_checks, c.rejections, c.transmissions,
        )
        return rows

    def attack(self, request: AttackRequest, topo: Optional[Topology] = None) -> List[Union[AttackRow, CorrelationRow]]:
        """
        Run one attack campaign.

        Without ``topo`` the campaign runs on a chain whose target sits
        ``request.l`` forwarding checks past the attacker's NAP.

        Raises:
            ParameterError: invalid tag width, or attacker/target missing for a supplied topology
        """
        _check_hash_bits(request.hash_bits)
        keys = MasterKeys.from_seed(request.seed, request.hash_bits)
        params = FilterParams(m=request.m, k=request.k, rho_max=self.settings.rho_max)

        if request.mode == AttackMode.COMPUTATIONAL:
            report = run_correlation_probe(keys, params, request.trials, request.seed, request.n_lids)
            return [report.raw.to_row(), report.encrypted.to_row()]

        if topo is None:
            topo = chain_topology(request.l + 1, params, request.seed)
            attacker, target = "pub", "sub"
        else:
            if not request.attacker or not request.target:
                raise ParameterError("attacks on a loaded topology need both an attacker and a target")
            attacker, target = request.attacker, request.target

        cfg = AdversaryConfig(
            mode=request.mode,
            scheme=request.scheme,
            trials=request.trials,
            target=target,
            attacker=attacker,
            seed=request.seed,
            strategy=request.strategy,
            rho_m=request.rho_m,
            rotations=request.rotations,
            max_fill_drop=request.max_fill_drop,
            workers=request.workers,
            min_expected=self.settings.empirical_min_expected,
        )
        if request.mode == AttackMode.REPLAY:
            report = run_replay(topo, cfg, keys)
        else:
            report = run_brute_force(topo, cfg, keys)
            if report.forge_rate is not None:
                logger.info("security check passed %d/%d forged credentials", report.security_passes, report.trials)
        if report.empirical_rate is None:
            logger.warning(
                "%s l=%d: analytic p_a=%.3g is out of reach of %d trials; empirical cell left empty",
                request.scheme.value, report.path_len, report.analytic_p_a, report.trials,
            )
        return [report.to_row()]

    def topology(
        self,
        kind: str,
        params: FilterParams,
        seed: int = 0,
        nodes: int = 20,
        hops: int = 4,
    ) -> str:
        """A generated topology document with every LinkId written out."""
        if kind == "chain":
            doc = chain_document(hops, params, seed)
        elif kind == "random":
            doc = random_document(nodes, params, seed)
        else:
            raise ParameterError(f"unknown topology kind {kind!r}")
        return topology_to_document(build_topology(doc))
