# models/reports.py
from __future__ import annotations

import math
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ----- enums / literals -----
Method = Literal["tree", "ultra", "fast", "bounds", "dense"]
Command = Literal["estimate", "bounds", "verify", "gen", "bench"]
Certification = Literal["exact", "dense", "probe", "tree", "none"]
StretchMethod = Literal["exact-tree", "exact-solve", "sketched"]
PlanMode = Literal["theorem", "pilot"]


class PlanDiagnostics(BaseModel):
    """Sample plan of one Monte Carlo remainder estimate.

    - variance_term / small_n_term: the 1/eps and 1/(n eps^2) parts of p
    - truncation_bias: (1 - delta)^(l+1) / delta
    - mode "pilot": p from the spread of a pilot batch, l from the tail bound;
      theorem_p and theorem_l keep the worst-case plan it replaced
    """

    model_config = ConfigDict(extra="ignore")

    p: int
    l: int
    eps: float
    eta: float
    delta: float
    kappa: float
    nu: float
    variance_term: float
    small_n_term: float
    truncation_bias: float
    mode: PlanMode = "theorem"
    sample_std: Optional[float] = None
    theorem_p: Optional[int] = None
    theorem_l: Optional[int] = None


class StretchReport(BaseModel):
    """Generalized stretch st_H(G) with how it was computed.

    `per_edge` holds w_e R_H(e) for every edge of G and stays out of dumps.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="ignore")

    value: float
    method: StretchMethod
    eps_sketch: Optional[float] = None
    per_edge: Optional[np.ndarray] = Field(default=None, exclude=True, repr=False)


class LevelDiagnostics(BaseModel):
    model_config = ConfigDict(extra="ignore")

    laplacian: Literal["tilde", "hat", "sparsified"]
    component: int = 0
    level: int = 0
    dim: int
    edges: int
    kappa: Optional[float] = None
    certification: Certification = "none"
    pivot_logsum: float = 0.0
    remainder: float = 0.0  # grounded log det(B^-1 A) contribution
    plan: Optional[PlanDiagnostics] = None
    degraded: bool = False


class EstimateReport(BaseModel):
    """Result of one log-determinant estimate.

    `estimate` is the per-vertex value n^-1 ln|A|; `lower` and `upper` are the
    deterministic stretch sandwich on the same scale.
    """

    model_config = ConfigDict(extra="ignore")

    estimate: float
    raw_logdet: float
    lower: Optional[float] = None
    upper: Optional[float] = None
    eps: Optional[float] = None
    eta: Optional[float] = None
    seed: Optional[int] = None
    method: Method
    n: int
    m: int
    levels: List[LevelDiagnostics] = Field(default_factory=list)
    samples: int = 0
    degraded: bool = False
    flags: List[str] = Field(default_factory=list)
    time_ms: float = 0.0

    @field_validator("estimate", "raw_logdet")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("estimate must be finite")
        return value

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "EstimateReport":
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        return self


class RunConfig(BaseModel):
    """Options of one CLI invocation, validated before anything runs."""

    model_config = ConfigDict(extra="ignore")

    command: Command
    input: Optional[str] = None
    method: Method = "tree"
    eps: float = Field(default=0.1, gt=0.0, le=10.0)
    eta: float = Field(default=0.1, gt=0.0, lt=1.0)
    seed: int = 42
    out: Optional[str] = None
    dense_cap: int = Field(default=2000, ge=1)
    dense_threshold: int = Field(default=100, ge=1)
    threads: int = Field(default=1, ge=1)


class VerifyReport(BaseModel):
    model_config = ConfigDict(extra="ignore")

    method: Method
    n: int
    estimate: float
    dense: float
    error: float
    eps: float
    lower: Optional[float] = None
    upper: Optional[float] = None
    passed: bool
    degraded: bool = False


class BenchRow(BaseModel):
    model_config = ConfigDict(extra="ignore")

    kind: str
    n: int
    m: int
    method: Method
    seed: int
    estimate: float
    dense: Optional[float] = None
    error: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    levels: int = 0
    samples: int = 0
    degraded: bool = False
    time_ms: float = 0.0

    def as_row(self) -> Dict[str, object]:
        return self.model_dump()
