"""Parameters and state containers."""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .labels import Label
from .movement import CEMETERY, MovementSpec

__all__ = [
    "Params",
    "Phase",
    "ParticleRecord",
    "FullConfiguration",
    "SimplifiedState",
]

_SUM_TOL = 1e-12


def _clean_law(law: Mapping[int, float], name: str, min_k: int) -> dict[int, float]:
    out = {}
    for k, w in dict(law).items():
        k = int(k)
        w = float(w)
        if k < min_k:
            raise ValueError(f"{name}: support points must be >= {min_k}, got {k}")
        if not math.isfinite(w) or w < 0:
            raise ValueError(f"{name}: weights must be finite and non-negative")
        if w > 0:
            out[k] = out.get(k, 0.0) + w
    return dict(sorted(out.items()))


@dataclass(frozen=True, eq=False)
class Params:
    """Model rates and laws.

    ``delta_S`` may be ``math.inf``: a settling particle then releases its
    burst and dies at once.  ``L=None`` means no offspring cap.  ``q`` is the
    law of the settlement burst on {0,1,...}; ``nu`` is the batch measure on
    {1,2,...} with total mass ``mu_B``.
    """

    mu_S: float
    mu_B: float = 0.0
    delta_M: float = 0.0
    delta_S: float = 0.0
    L: int | None = None
    q: Mapping[int, float] = field(default_factory=lambda: {0: 1.0})
    nu: Mapping[int, float] = field(default_factory=dict)
    movement: MovementSpec = field(default_factory=MovementSpec.brownian)

    def __post_init__(self):
        for name in ("mu_S", "mu_B", "delta_M"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        ds = float(self.delta_S)
        if math.isnan(ds) or ds < 0:
            raise ValueError(f"delta_S must be in [0, inf], got {ds}")
        object.__setattr__(self, "delta_S", ds)
        if self.L is not None:
            if int(self.L) != self.L or self.L < 1:
                raise ValueError("L must be a positive integer or None")
            object.__setattr__(self, "L", int(self.L))
        q = _clean_law(self.q, "q", 0)
        if abs(sum(q.values()) - 1.0) > _SUM_TOL:
            raise ValueError(f"q must sum to 1, got {sum(q.values())!r}")
        nu = _clean_law(self.nu, "nu", 1)
        total = sum(nu.values())
        if abs(total - self.mu_B) > _SUM_TOL:
            raise ValueError(f"nu must have total mass mu_B={self.mu_B}, got {total!r}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "nu", nu)
        if not isinstance(self.movement, MovementSpec):
            raise TypeError("movement must be a MovementSpec")

    @property
    def instant_settled_death(self) -> bool:
        return math.isinf(self.delta_S)

    @property
    def mean_burst(self) -> float:
        return sum(k * w for k, w in self.q.items())

    @property
    def batch_moment(self) -> float:
        """Sum of k * nu({k})."""
        return sum(k * w for k, w in self.nu.items())

    def replace(self, **changes) -> "Params":
        d = dict(
            mu_S=self.mu_S, mu_B=self.mu_B, delta_M=self.delta_M, delta_S=self.delta_S,
            L=self.L, q=self.q, nu=self.nu, movement=self.movement,
        )
        d.update(changes)
        return Params(**d)

    def to_dict(self) -> dict:
        return {
            "mu_S": self.mu_S,
            "mu_B": self.mu_B,
            "delta_M": self.delta_M,
            "delta_S": "inf" if self.instant_settled_death else self.delta_S,
            "L": "inf" if self.L is None else self.L,
            "q": {str(k): w for k, w in self.q.items()},
            "nu": {str(k): w for k, w in self.nu.items()},
            "movement": self.movement.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def pack(self):
        """Arrays consumed by the compiled kernels."""
        prm = np.array(
            [
                self.mu_S,
                self.mu_B,
                self.delta_M,
                0.0 if self.instant_settled_death else self.delta_S,
                1.0 if self.instant_settled_death else 0.0,
                math.inf if self.L is None else float(self.L),
            ],
            dtype=np.float64,
        )
        qk = np.array(list(self.q), dtype=np.int64)
        qcum = np.cumsum(np.array(list(self.q.values()), dtype=np.float64))
        if self.nu:
            nk = np.array(list(self.nu), dtype=np.int64)
            ncum = np.cumsum(np.array(list(self.nu.values()), dtype=np.float64))
        else:
            nk = np.ones(1, dtype=np.int64)
            ncum = np.ones(1, dtype=np.float64)
        return prm, qk, qcum, nk, ncum


class Phase(enum.Enum):
    MOVING = 0
    SETTLED = 1


@dataclass(frozen=True, eq=False)
class ParticleRecord:
    label: Label
    birth_time: float
    settle_time: float | None
    death_time: float | None
    offspring_count: int
    position: object  # np.ndarray or CEMETERY

    @property
    def phase(self) -> Phase:
        return Phase.SETTLED if self.settle_time is not None else Phase.MOVING

    @property
    def alive(self) -> bool:
        return self.death_time is None

    def to_dict(self) -> dict:
        return {
            "label": self.label.to_json(),
            "birth_time": self.birth_time,
            "settle_time": self.settle_time,
            "death_time": self.death_time,
            "offspring_count": self.offspring_count,
            "position": None if self.position is CEMETERY else np.asarray(self.position).tolist(),
        }


@dataclass(frozen=True, eq=False)
class FullConfiguration:
    """Labeled state: living particles in engine slot order (moving block, then settled block)."""

    living: tuple[ParticleRecord, ...]
    time: float = 0.0

    @classmethod
    def from_particles(
        cls,
        labels: Sequence[Sequence[int]],
        positions,
        settled: Sequence[bool] | None = None,
        offspring: Sequence[int] | None = None,
        time: float = 0.0,
    ) -> "FullConfiguration":
        n = len(labels)
        pts = np.asarray(positions, dtype=np.float64).reshape(n, -1) if n else np.zeros((0, 1))
        settled = [False] * n if settled is None else list(settled)
        offspring = [0] * n if offspring is None else list(offspring)
        if len(settled) != n or len(offspring) != n:
            raise ValueError("labels, settled and offspring must have the same length")
        recs = []
        for i in range(n):
            if offspring[i] < 0:
                raise ValueError("offspring counts must be non-negative")
            if offspring[i] > 0 and not settled[i]:
                raise ValueError("a moving particle cannot have offspring")
            recs.append(
                ParticleRecord(
                    Label(labels[i]), time, time if settled[i] else None, None, int(offspring[i]), pts[i].copy()
                )
            )
        if len({r.label for r in recs}) != n:
            raise ValueError("labels must be distinct")
        return cls(tuple(recs), time)

    @property
    def labels(self) -> list[Label]:
        return [r.label for r in self.living]

    @property
    def is_empty(self) -> bool:
        return not self.living


@dataclass(frozen=True, eq=False)
class SimplifiedState:
    """Counts of moving and settled particles with ordered positions.

    ``positions`` has shape ``(n_m + n_s, point_dim)``: moving particles
    first, settled last.  ``n_m == n_s == 0`` is the cemetery.
    """

    n_m: int
    n_s: int
    positions: np.ndarray

    def __post_init__(self):
        if self.n_m < 0 or self.n_s < 0:
            raise ValueError("counts must be non-negative")
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim == 1:
            pos = pos.reshape(self.n_m + self.n_s, -1) if pos.size else pos.reshape(0, 1)
        if pos.shape[0] != self.n_m + self.n_s:
            raise ValueError(
                f"positions length {pos.shape[0]} does not match n_m + n_s = {self.n_m + self.n_s}"
            )
        pos.setflags(write=False)
        object.__setattr__(self, "n_m", int(self.n_m))
        object.__setattr__(self, "n_s", int(self.n_s))
        object.__setattr__(self, "positions", pos)

    @classmethod
    def cemetery(cls, point_dim: int = 1) -> "SimplifiedState":
        return cls(0, 0, np.zeros((0, point_dim)))

    @property
    def is_cemetery(self) -> bool:
        return self.n_m == 0 and self.n_s == 0

    @property
    def total(self) -> int:
        return self.n_m + self.n_s

    @property
    def point_dim(self) -> int:
        return self.positions.shape[1]

    @property
    def moving(self) -> np.ndarray:
        return self.positions[: self.n_m]

    @property
    def settled(self) -> np.ndarray:
        return self.positions[self.n_m :]

    def __eq__(self, other):
        if not isinstance(other, SimplifiedState):
            return NotImplemented
        if self.is_cemetery and other.is_cemetery:
            return True
        return (
            self.n_m == other.n_m
            and self.n_s == other.n_s
            and self.positions.shape == other.positions.shape
            and bool(np.array_equal(self.positions, other.positions))
        )

    __hash__ = None

    def __repr__(self):
        if self.is_cemetery:
            return "SimplifiedState(∂)"
        return f"SimplifiedState(n_m={self.n_m}, n_s={self.n_s}, positions={self.positions.tolist()})"
