from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class FilterParams(BaseModel):
    """Bloom-filter geometry shared by every component of a run."""
    model_config = ConfigDict(frozen=True)

    m: int = Field(default=256, gt=0, description="filter width in bits")
    k: int = Field(default=5, gt=0, description="bits set per LinkId")
    rho_max: float = Field(default=0.5, gt=0.0, le=1.0, description="maximum fill factor")

    @model_validator(mode="after")
    def _check_geometry(self) -> "FilterParams":
        if self.k > self.m:
            raise ValueError(f"k ({self.k}) must not exceed m ({self.m})")
        if self.m % 8:
            raise ValueError(f"m ({self.m}) must be a whole number of bytes")
        return self


class Role(str, Enum):
    PUB = "PUB"
    SUB = "SUB"
    NAP = "NAP"
    FW = "FW"
    TM = "TM"

    @property
    def is_user(self) -> bool:
        return self in (Role.PUB, Role.SUB)


class Scheme(str, Enum):
    LIPSIN_PLAIN = "lipsin"
    EFID_SECURED = "efid"


class AttackMode(str, Enum):
    BRUTE_FORCE = "brute"
    REPLAY = "replay"
    COMPUTATIONAL = "corr"


class GuessStrategy(str, Enum):
    RANDOM_FILL = "random"
    SATURATED = "saturated"


# --- topology document ----------------------------------------------------

class NodeSpec(BaseModel):
    """One node record of a topology document."""
    id: str = Field(min_length=1)
    role: Role


class LinkSpec(BaseModel):
    """A physical link; each direction gets its own LinkId."""
    a: str
    b: str
    lid_ab: Optional[str] = None
    lid_ba: Optional[str] = None


class TopologyDocument(BaseModel):
    """Serialized form of a topology (JSON)."""
    params: FilterParams
    seed: int = Field(default=0, ge=0)
    nodes: List[NodeSpec]
    links: List[LinkSpec] = Field(default_factory=list)


# --- CSV rows ---------------------------------------------------------------
# Field order is the column order; never reorder.

class AnalyzeRow(BaseModel):
    l: int
    m: int
    k: int
    n_lids: int
    rho_m: float
    hash_bits: int
    p_sc: float
    p_fw: float
    p_a: float
    attempts_for_p_sc: int


class SweepRow(BaseModel):
    l: int
    scheme: Scheme
    m: int
    k: int
    n_lids: int
    rho_m: float
    p_sc: float
    p_fw: float
    p_a: float
    empirical_rate: Optional[float] = None
    trials: Optional[int] = None
    seed: int


class FlowRow(BaseModel):
    flow_id: int
    pub: str
    sub: str
    path_len: int
    delivered: bool
    false_positive_links: int
    hops: int


class AttackRow(BaseModel):
    mode: AttackMode
    scheme: Scheme
    l: int
    trials: int
    successes: int
    empirical_rate: Optional[float] = None
    zero_success_bound: Optional[float] = None
    analytic_p_fw: float
    analytic_p_sc: float
    analytic_p_a: float
    birthday_p_sc: float
    hash_bits: int
    seed: int


class CorrelationRow(BaseModel):
    source: str
    samples: int
    max_bias_z: float
    bias_threshold_z: float
    max_corr_z: float
    corr_threshold_z: float
    biased_bits: int
    correlated_pairs: int
    detected: bool


# --- HTTP requests ----------------------------------------------------------

class AnalyzeRequest(BaseModel):
    """Request model for an analytic table."""
    m: int = Field(default=256, gt=0)
    k: int = Field(default=5, ge=1)
    n_lids: int = Field(default=23, ge=1)
    rho_m: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    hash_bits: int = 64
    p_sc: float = Field(default=1e-6, gt=0.0, lt=1.0)
    l_min: int = Field(default=1, ge=1)
    l_max: int = Field(default=8, ge=1)


class SweepRequest(BaseModel):
    """Request model for the two-scheme attack-probability sweep."""
    m: int = 256
    lipsin_m: int = 320
    k: int = 5
    n_lids: int = 23
    rho_m: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    p_sc: float = Field(default=1e-6, gt=0.0, le=1.0)
    l_min: int = Field(default=1, ge=1)
    l_max: int = Field(default=8, ge=1)
    trials: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)


class AttackRequest(BaseModel):
    """Attack campaign; without a topology it runs on a chain with the target ``l`` checks past the NAP."""
    mode: AttackMode = AttackMode.BRUTE_FORCE
    scheme: Scheme = Scheme.LIPSIN_PLAIN
    strategy: GuessStrategy = GuessStrategy.RANDOM_FILL
    m: int = 256
    k: int = 5
    rho_m: float = Field(default=0.5, gt=0.0, le=1.0)
    hash_bits: int = 64
    l: int = Field(default=1, ge=1)
    n_lids: int = Field(default=23, ge=2)
    trials: int = Field(default=10_000, ge=1)
    rotations: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1, le=64)
    max_fill_drop: bool = False
    attacker: Optional[str] = None
    target: Optional[str] = None
