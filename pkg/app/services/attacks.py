"""Adversaries against the forwarding plane, and the analytic attack model.

Three attacks are modelled: brute-force guessing of identifiers, replay of a
captured identifier, and correlation analysis of collected identifiers. Each
campaign reports what it observed next to what the closed-form model
predicts, so the two can be compared cell by cell.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import networkx as nx
import numpy as np
from scipy.stats import binom, norm

from app.core.errors import ParameterError, Unreachable
from app.models.schemas import (
    AttackMode,
    AttackRow,
    CorrelationRow,
    FilterParams,
    GuessStrategy,
    Scheme,
    SweepRow,
)
from app.services.attachment import (
    MasterKeys,
    encrypt_fid,
    issue_credential,
    random_credential,
    rotate_key,
    tag_matches,
)
from app.services.bloom import (
    ForwardingId,
    build_fid,
    expected_fill,
    false_positive_prob,
    new_link_id,
    random_fid_bits,
    saturated_fid,
)
from app.services.network import IngressPolicy, Topology, build_path_fid, compute_path, propagate
from app.services.topology_builder import chain_topology
from app.utils.rng import stream

logger = logging.getLogger(__name__)

# Reference first-hop attack probabilities for n=23, k=5, logged beside the
# computed values.
LIPSIN_FIRST_HOP_REFERENCE = 1e-4
EFID_FIRST_HOP_REFERENCE = 1.3e-8

CHUNK_TRIALS = 10_000


# --- birthday model -------------------------------------------------------------

@dataclass(frozen=True)
class BirthdayQuery:
    r: int
    p_sc: float
    x: int

    def __post_init__(self):
        _check_birthday_domain(self.r, self.p_sc)


def _check_birthday_domain(r: int, p_sc: float) -> None:
    if r < 2:
        raise ParameterError(f"hash range must be >= 2, got {r}")
    if not 0.0 < p_sc < 1.0:
        raise ParameterError(f"p_sc must be in (0, 1), got {p_sc}")


def birthday_attempts(r: int, p_sc: float, round_up: bool = True):
    """Attempts x needed for collision probability p_sc over a range of size r."""
    _check_birthday_domain(r, p_sc)
    x = math.sqrt(2.0 * r * -math.log1p(-p_sc))
    return math.ceil(x) if round_up else x


def birthday_query(r: int, p_sc: float) -> BirthdayQuery:
    return BirthdayQuery(r, p_sc, birthday_attempts(r, p_sc))


def collision_probability(r: int, x: float) -> float:
    """Closed-form inverse of the attempt estimate: 1 - exp(-x^2 / 2r)."""
    if r < 2:
        raise ParameterError(f"hash range must be >= 2, got {r}")
    if x < 0:
        raise ParameterError(f"attempt count must be >= 0, got {x}")
    return -math.expm1(-(x * x) / (2.0 * r))


def exact_collision_probability(r: int, x: int) -> float:
    """1 - prod_{i=1}^{x-1} (1 - i/r), evaluated in log space."""
    if r < 2 or x < 0:
        raise ParameterError(f"invalid birthday query r={r}, x={x}")
    if x > r:
        return 1.0
    if x <= 1:
        return 0.0
    if x > 10_000_000:
        raise ParameterError(f"exact product over {x} terms is not supported")
    log_none = float(np.log1p(-np.arange(1, x, dtype=np.float64) / r).sum())
    return -math.expm1(log_none)


def attack_probability(p_sc: float, rho_m: float, k: int, l: int) -> float:
    """Probability that one injected packet passes the security and all forwarding checks."""
    if not 0.0 <= p_sc <= 1.0:
        raise ParameterError(f"p_sc must be in [0, 1], got {p_sc}")
    return p_sc * false_positive_prob(rho_m, k, l)


# --- campaigns -------------------------------------------------------------------

@dataclass(frozen=True)
class AdversaryConfig:
    mode: AttackMode
    scheme: Scheme
    trials: int
    target: str
    attacker: str
    seed: int = 0
    strategy: GuessStrategy = GuessStrategy.RANDOM_FILL
    rho_m: float = 0.5
    rotations: int = 0
    max_fill_drop: bool = False
    workers: int = 1
    min_expected: float = 1.0

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError(f"trials must be >= 1, got {self.trials}")
        if self.rotations < 0:
            raise ParameterError(f"rotations must be >= 0, got {self.rotations}")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")
        if not 0.0 < self.rho_m <= 1.0:
            raise ParameterError(f"rho_m must be in (0, 1], got {self.rho_m}")

    @property
    def policy(self) -> IngressPolicy:
        return IngressPolicy(self.scheme, self.max_fill_drop)


@dataclass(frozen=True)
class AttackReport:
    mode: AttackMode
    scheme: Scheme
    successes: int
    trials: int
    path_len: int
    analytic_p_fw: float
    analytic_p_sc: float
    analytic_p_a: float
    birthday_p_sc: float
    hash_bits: int
    seed: int
    feasible: bool
    security_passes: Optional[int] = None

    @property
    def empirical_rate(self) -> Optional[float]:
        """successes / trials; withheld for infeasible cells that saw nothing."""
        if not self.feasible and self.successes == 0:
            return None
        return self.successes / self.trials

    @property
    def zero_success_bound(self) -> Optional[float]:
        """95% upper bound on the rate when nothing succeeded (rule of three)."""
        return 3.0 / self.trials if self.successes == 0 else None

    @property
    def forge_rate(self) -> Optional[float]:
        if self.security_passes is None:
            return None
        return self.security_passes / self.trials

    def to_row(self) -> AttackRow:
        return AttackRow(
            mode=self.mode,
            scheme=self.scheme,
            l=self.path_len,
            trials=self.trials,
            successes=self.successes,
            empirical_rate=self.empirical_rate,
            zero_success_bound=self.zero_success_bound,
            analytic_p_fw=self.analytic_p_fw,
            analytic_p_sc=self.analytic_p_sc,
            analytic_p_a=self.analytic_p_a,
            birthday_p_sc=self.birthday_p_sc,
            hash_bits=self.hash_bits,
            seed=self.seed,
        )


def _hops_past_nap(topo: Topology, attacker: str, target: str) -> int:
    if not topo.role(attacker).is_user:
        raise ParameterError(f"attacker {attacker} must be a user attached to a NAP")
    nap = topo.nap_of(attacker)
    topo.role(target)
    try:
        return nx.shortest_path_length(topo.graph, nap, target)
    except nx.NetworkXNoPath:
        raise Unreachable(nap, target) from None


def _run_chunks(fn: Callable, n_chunks: int, workers: int, *args) -> List:
    """Run ``fn(i, *args)`` for every chunk index; results come back in index order."""
    if workers <= 1 or n_chunks <= 1:
        return [fn(i, *args) for i in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks), *([a] * n_chunks for a in args)))


def _chunk_sizes(trials: int) -> List[int]:
    full, rest = divmod(trials, CHUNK_TRIALS)
    return [CHUNK_TRIALS] * full + ([rest] if rest else [])


def _brute_force_chunk(index: int, topo: Topology, cfg: AdversaryConfig, keys: MasterKeys, size: int):
    """(target hits, security-check passes) for one chunk of guesses."""
    rng = stream(cfg.seed, "brute-force", index)
    m = topo.params.m
    policy = cfg.policy
    hits = passes = 0

    if cfg.scheme == Scheme.LIPSIN_PLAIN:
        if cfg.strategy == GuessStrategy.SATURATED:
            guesses: Iterable[ForwardingId] = (saturated_fid(topo.params) for _ in range(size))
        else:
            guesses = (ForwardingId(bits, m) for bits in random_fid_bits(m, cfg.rho_m, rng, size))
        for fid in guesses:
            if cfg.target in propagate(topo, cfg.attacker, fid, keys, policy).reached:
                hits += 1
        return hits, None

    for _ in range(size):
        cred = random_credential(rng, m, keys)
        if not tag_matches(cred, keys):
            continue
        passes += 1
        if cfg.target in propagate(topo, cfg.attacker, cred, keys, policy).reached:
            hits += 1
    return hits, passes


def _fill_pass_prob(m: int, rho: float, rho_max: float) -> float:
    """Probability that a filter with Bernoulli(rho) bits survives the max-fill drop."""
    return float(binom.cdf(math.floor(rho_max * m), m, rho))


def run_brute_force(topo: Topology, cfg: AdversaryConfig, keys: MasterKeys) -> AttackReport:
    """Inject ``cfg.trials`` guessed identifiers at the attacker's NAP."""
    l = _hops_past_nap(topo, cfg.attacker, cfg.target)
    k, m = topo.params.k, topo.params.m
    sizes = _chunk_sizes(cfg.trials)
    results = _run_chunks(_sized_brute_force_chunk, len(sizes), cfg.workers, topo, cfg, keys, sizes)
    hits = sum(h for h, _ in results)

    if cfg.scheme == Scheme.LIPSIN_PLAIN:
        passes = None
        p_sc = birthday = 1.0
        guess_rho = 1.0 if cfg.strategy == GuessStrategy.SATURATED else cfg.rho_m
    else:
        passes = sum(p for _, p in results)
        p_sc = 2.0 ** -keys.hash_bits
        birthday = collision_probability(2 ** keys.hash_bits, cfg.trials)
        # decrypting a random ciphertext gives a uniformly random filter
        guess_rho = 0.5
    p_fw = false_positive_prob(guess_rho, k, l)
    if cfg.max_fill_drop:
        p_fw *= _fill_pass_prob(m, guess_rho, topo.params.rho_max)
    p_a = p_sc * p_fw

    report = AttackReport(
        mode=AttackMode.BRUTE_FORCE,
        scheme=cfg.scheme,
        successes=hits,
        trials=cfg.trials,
        path_len=l,
        analytic_p_fw=p_fw,
        analytic_p_sc=p_sc,
        analytic_p_a=p_a,
        birthday_p_sc=birthday,
        hash_bits=keys.hash_bits,
        seed=cfg.seed,
        feasible=p_a * cfg.trials >= cfg.min_expected,
        security_passes=passes,
    )
    logger.info(
        "brute force %s l=%d: %d/%d hits (analytic p_a=%.3g)",
        cfg.scheme.value, l, hits, cfg.trials, p_a,
    )
    return report


def _sized_brute_force_chunk(index: int, topo: Topology, cfg: AdversaryConfig, keys: MasterKeys, sizes: Sequence[int]):
    return _brute_force_chunk(index, topo, cfg, keys, sizes[index])


def run_replay(topo: Topology, cfg: AdversaryConfig, keys: MasterKeys) -> AttackReport:
    """Capture a legitimate identifier for attacker -> target, then replay it.

    ``cfg.rotations`` tag-key rotations happen between capture and replay.
    """
    path = compute_path(topo, cfg.attacker, cfg.target)
    fid = build_path_fid(path, topo.params)
    captured = issue_credential(fid, keys) if cfg.scheme == Scheme.EFID_SECURED else fid

    replay_keys = keys
    for _ in range(cfg.rotations):
        replay_keys = rotate_key(replay_keys)

    hits = 0
    policy = cfg.policy
    for _ in range(cfg.trials):
        if cfg.target in propagate(topo, cfg.attacker, captured, replay_keys, policy).reached:
            hits += 1

    # a rotated key leaves only a chance tag match
    p_sc = 1.0 if cfg.scheme == Scheme.LIPSIN_PLAIN or cfg.rotations == 0 else 2.0 ** -keys.hash_bits
    if cfg.rotations == 0 and cfg.scheme == Scheme.EFID_SECURED:
        logger.warning("replay within the issuing epoch succeeds until the tag key rotates")
    return AttackReport(
        mode=AttackMode.REPLAY,
        scheme=cfg.scheme,
        successes=hits,
        trials=cfg.trials,
        path_len=path.l - 1,
        analytic_p_fw=1.0,
        analytic_p_sc=p_sc,
        analytic_p_a=p_sc,
        birthday_p_sc=p_sc,
        hash_bits=keys.hash_bits,
        seed=cfg.seed,
        feasible=True,
    )


# --- computational attack -----------------------------------------------------------

@dataclass(frozen=True)
class UniformityStats:
    """Per-bit bias and pairwise correlation of a sample of filters."""
    source: str
    samples: int
    max_bias_z: float
    bias_threshold_z: float
    max_corr_z: float
    corr_threshold_z: float
    biased_bits: int
    correlated_pairs: int

    @property
    def detected(self) -> bool:
        return self.biased_bits > 0 or self.correlated_pairs > 0

    @property
    def bias_threshold(self) -> float:
        """Threshold on |p - 1/2| as a fraction."""
        return self.bias_threshold_z * 0.5 / math.sqrt(self.samples)

    @property
    def corr_threshold(self) -> float:
        """Threshold on |correlation coefficient|."""
        return self.corr_threshold_z / math.sqrt(self.samples)

    def to_row(self) -> CorrelationRow:
        return CorrelationRow(
            source=self.source,
            samples=self.samples,
            max_bias_z=self.max_bias_z,
            bias_threshold_z=self.bias_threshold_z,
            max_corr_z=self.max_corr_z,
            corr_threshold_z=self.corr_threshold_z,
            biased_bits=self.biased_bits,
            correlated_pairs=self.correlated_pairs,
            detected=self.detected,
        )


@dataclass(frozen=True)
class CorrelationReport:
    raw: UniformityStats
    encrypted: UniformityStats


def threshold_z(tests: int, sigma: float = 4.0, alpha: float = 1e-3) -> float:
    """``sigma``, raised to the Bonferroni level when ``tests`` statistics are screened."""
    return max(sigma, float(norm.isf(alpha / (2 * tests))))


def uniformity_stats(bits: np.ndarray, source: str) -> UniformityStats:
    """Bias and correlation screen over a (samples x m) 0/1 matrix."""
    n, m = bits.shape
    x = bits.astype(np.float64)
    p = x.mean(axis=0)
    bias_z = np.abs(p - 0.5) / (0.5 / math.sqrt(n))

    centered = x - p
    std = centered.std(axis=0)
    live = std > 0
    z = np.zeros_like(centered)
    z[:, live] = centered[:, live] / std[live]
    corr = (z.T @ z) / n
    upper = np.triu_indices(m, 1)
    corr_z = np.abs(corr[upper]) * math.sqrt(n)

    bias_t = threshold_z(m)
    corr_t = threshold_z(len(corr_z))
    return UniformityStats(
        source=source,
        samples=n,
        max_bias_z=float(bias_z.max()),
        bias_threshold_z=bias_t,
        max_corr_z=float(corr_z.max()) if corr_z.size else 0.0,
        corr_threshold_z=corr_t,
        biased_bits=int((bias_z > bias_t).sum()),
        correlated_pairs=int((corr_z > corr_t).sum()),
    )


def _to_bit_matrix(rows: Sequence[bytes]) -> np.ndarray:
    raw = np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(len(rows), -1)
    return np.unpackbits(raw, axis=1, bitorder="little")


def run_correlation_probe(
    keys: MasterKeys,
    params: FilterParams,
    samples: int,
    seed: int = 0,
    n_lids: int = 23,
    families: int = 4,
) -> CorrelationReport:
    """Collect FIds that share all but one LinkId and screen them for structure.

    Each sample belongs to one of ``families`` sub-paths of ``n_lids - 1``
    shared LinkIds and adds one fresh LinkId. The raw FIds are the positive
    control; their encryptions must look uniform.
    """
    if samples < 1000:
        raise ParameterError(f"the probe needs at least 1000 samples, got {samples}")
    rng = stream(seed, "correlation-probe")
    shared = [[new_link_id(params, rng) for _ in range(n_lids - 1)] for _ in range(families)]

    plain: List[bytes] = []
    cipher: List[bytes] = []
    for i in range(samples):
        fid = build_fid(shared[i % families] + [new_link_id(params, rng)], params)
        plain.append(fid.to_bytes())
        cipher.append(encrypt_fid(fid, keys.k1).data)

    report = CorrelationReport(
        raw=uniformity_stats(_to_bit_matrix(plain), "fid"),
        encrypted=uniformity_stats(_to_bit_matrix(cipher), "efid"),
    )
    logger.info(
        "correlation probe (%d samples): raw max |z| bias=%.1f corr=%.1f; encrypted bias=%.1f corr=%.1f",
        samples, report.raw.max_bias_z, report.raw.max_corr_z,
        report.encrypted.max_bias_z, report.encrypted.max_corr_z,
    )
    return report


# --- attack probability across path lengths ---------------------------------------------

def scheme_sweep(
    params_efid: FilterParams,
    params_lipsin: FilterParams,
    p_sc: float,
    l_range: Sequence[int],
    n_lids: int = 23,
    rho_m: Optional[float] = None,
    empirical_trials: int = 0,
    seed: int = 0,
    workers: int = 1,
    min_expected: float = 1.0,
) -> List[SweepRow]:
    """p_a per hop count for the secured scheme and plain LIPSIN.

    Each scheme's fill defaults to the expected fill of ``n_lids`` LinkIds in
    its own width; ``rho_m`` overrides both. With ``empirical_trials`` the
    LIPSIN cells that are feasible at that trial count also get a brute-force
    measurement on a chain.
    """
    if not l_range:
        raise ParameterError("the sweep needs at least one path length")
    schemes = (
        (Scheme.EFID_SECURED, params_efid, p_sc),
        (Scheme.LIPSIN_PLAIN, params_lipsin, 1.0),
    )
    rows: List[SweepRow] = []
    for l in l_range:
        for scheme, params, scheme_p_sc in schemes:
            rho = rho_m if rho_m is not None else expected_fill(params.m, params.k, n_lids)
            p_fw = false_positive_prob(rho, params.k, l)
            p_a = attack_probability(scheme_p_sc, rho, params.k, l)
            empirical = trials = None
            if empirical_trials and scheme == Scheme.LIPSIN_PLAIN:
                if p_a * empirical_trials >= min_expected:
                    empirical, trials = _empirical_cell(params, rho, l, empirical_trials, seed, workers)
                else:
                    logger.warning(
                        "%s l=%d: p_a=%.3g is out of reach of %d trials; cell left analytic-only",
                        scheme.value, l, p_a, empirical_trials,
                    )
            rows.append(SweepRow(
                l=l, scheme=scheme, m=params.m, k=params.k, n_lids=n_lids, rho_m=rho,
                p_sc=scheme_p_sc, p_fw=p_fw, p_a=p_a, empirical_rate=empirical, trials=trials, seed=seed,
            ))
    _report_reference_gap(rows)
    return rows


def _empirical_cell(params: FilterParams, rho: float, l: int, trials: int, seed: int, workers: int):
    """Brute-force hit rate on a chain whose attacker sits ``l`` checks from the target."""
    topo = chain_topology(l + 1, FilterParams(m=params.m, k=params.k, rho_max=1.0), seed)
    cfg = AdversaryConfig(
        mode=AttackMode.BRUTE_FORCE, scheme=Scheme.LIPSIN_PLAIN, trials=trials, target="sub",
        attacker="pub", seed=seed, rho_m=rho, workers=workers,
    )
    report = run_brute_force(topo, cfg, MasterKeys.from_seed(seed))
    return report.successes / report.trials, trials


def _report_reference_gap(rows: Sequence[SweepRow]) -> None:
    for row in rows:
        if row.l != 1:
            continue
        reference = LIPSIN_FIRST_HOP_REFERENCE if row.scheme == Scheme.LIPSIN_PLAIN else EFID_FIRST_HOP_REFERENCE
        logger.info(
            "%s first hop: p_a=%.3g vs reference %.3g (ratio %.3g)",
            row.scheme.value, row.p_a, reference, row.p_a / reference,
        )
