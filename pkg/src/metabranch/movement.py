"""Movement models for single particles.

Three models are provided: Brownian motion in R^d, Brownian motion killed on
leaving an axis-aligned box (Euler sub-stepped, approximate), and a
finite-state continuous-time Markov chain.  Brownian motion and the chain can
be combined as independent coordinate blocks (position x type).

A point is stored as a float vector: the Brownian coordinates first, then the
chain state (as a float) when a chain block is present.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .rngstats import exp_draw

__all__ = [
    "CEMETERY",
    "MovementSpec",
    "Profile",
    "sample_transition",
    "sample_transitions",
    "kernel_expectation",
    "generator_apply_movement",
    "point_distance",
]

BROWNIAN = 0
KILLED_BROWNIAN = 1
CHAIN = 2
BROWNIAN_CHAIN = 3

_KIND_CODES = {
    "brownian": BROWNIAN,
    "killed_brownian": KILLED_BROWNIAN,
    "chain": CHAIN,
    "brownian_chain": BROWNIAN_CHAIN,
}


class _Cemetery:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "∂"

    def __reduce__(self):
        return (_Cemetery, ())


CEMETERY = _Cemetery()


@dataclass(frozen=True, eq=False)
class MovementSpec:
    kind: str = "brownian"
    dimension: int = 1
    sigma: float = 1.0
    box_lo: tuple[float, ...] = ()
    box_hi: tuple[float, ...] = ()
    euler_dt: float = 1e-3
    rates: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown movement kind {self.kind!r}")
        rates = np.array(self.rates, dtype=np.float64, copy=True)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ValueError("rate matrix must be square")
        if self.has_chain:
            if rates.shape[0] < 1:
                raise ValueError("chain needs at least one state")
            off = rates - np.diag(np.diag(rates))
            if np.any(off < 0):
                raise ValueError("rate matrix off-diagonals must be non-negative")
            # diagonal is implied by zero row sums
            rates = off - np.diag(off.sum(axis=1))
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        if self.has_brownian:
            if self.dimension < 1:
                raise ValueError("dimension must be >= 1")
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
        if self.kind == "killed_brownian":
            if not self.euler_dt > 0:
                raise ValueError("euler_dt must be positive")
            lo = tuple(float(v) for v in self.box_lo)
            hi = tuple(float(v) for v in self.box_hi)
            if len(lo) != self.dimension or len(hi) != self.dimension:
                raise ValueError("box bounds must match the dimension")
            if any(a >= b for a, b in zip(lo, hi)):
                raise ValueError("box must have box_lo < box_hi")
            object.__setattr__(self, "box_lo", lo)
            object.__setattr__(self, "box_hi", hi)

    @classmethod
    def brownian(cls, dimension: int = 1, sigma: float = 1.0) -> "MovementSpec":
        return cls("brownian", dimension, sigma)

    @classmethod
    def killed_brownian(cls, lo, hi, sigma: float = 1.0, euler_dt: float = 1e-3) -> "MovementSpec":
        lo = tuple(np.atleast_1d(lo).astype(float))
        hi = tuple(np.atleast_1d(hi).astype(float))
        return cls("killed_brownian", len(lo), sigma, lo, hi, euler_dt)

    @classmethod
    def chain(cls, rates) -> "MovementSpec":
        return cls("chain", 0, 1.0, rates=np.asarray(rates, dtype=float))

    @classmethod
    def brownian_chain(cls, dimension: int, sigma: float, rates) -> "MovementSpec":
        return cls("brownian_chain", dimension, sigma, rates=np.asarray(rates, dtype=float))

    @property
    def has_brownian(self) -> bool:
        return self.kind in ("brownian", "killed_brownian", "brownian_chain")

    @property
    def has_chain(self) -> bool:
        return self.kind in ("chain", "brownian_chain")

    @property
    def n_continuous(self) -> int:
        return self.dimension if self.has_brownian else 0

    @property
    def n_states(self) -> int:
        return self.rates.shape[0] if self.has_chain else 0

    @property
    def point_dim(self) -> int:
        return self.n_continuous + (1 if self.has_chain else 0)

    @property
    def conservative(self) -> bool:
        return self.kind != "killed_brownian"

    @property
    def approximate(self) -> bool:
        return self.kind == "killed_brownian"

    def check_point(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if z.shape != (self.point_dim,):
            raise ValueError(f"point must have {self.point_dim} coordinates, got shape {z.shape}")
        if self.has_chain:
            s = z[-1]
            if s != int(s) or not 0 <= s < self.n_states:
                raise ValueError(f"chain state must be an integer in [0, {self.n_states})")
        return z

    def pack(self):
        """Arrays consumed by the compiled kernels."""
        mi = np.array([_KIND_CODES[self.kind], self.n_continuous, self.n_states], dtype=np.int64)
        mf = np.array([self.sigma, self.euler_dt], dtype=np.float64)
        n = max(self.n_continuous, 1)
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        if self.kind == "killed_brownian":
            lo[:] = self.box_lo
            hi[:] = self.box_hi
        q = np.ascontiguousarray(self.rates if self.has_chain else np.zeros((1, 1)))
        return mi, mf, lo, hi, q

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.has_brownian:
            d.update(dimension=self.dimension, sigma=self.sigma)
        if self.kind == "killed_brownian":
            d.update(box_lo=list(self.box_lo), box_hi=list(self.box_hi), euler_dt=self.euler_dt)
        if self.has_chain:
            d["rates"] = self.rates.tolist()
        return d


@dataclass(frozen=True)
class Profile:
    """Single-particle test profile.

    ``width`` gives the Gaussian bump ``exp(-|x|^2 / (2 width^2))`` on the
    Brownian coordinates (``None`` means the factor 1); ``chain_values`` gives
    a value per chain state (``None`` means the factor 1).
    """

    width: float | None = 1.0
    chain_values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.width is not None and not self.width > 0:
            raise ValueError("bump width must be positive")
        if self.chain_values is not None:
            object.__setattr__(self, "chain_values", tuple(float(v) for v in self.chain_values))

    def __call__(self, z, spec: MovementSpec) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        v = 1.0
        nc = spec.n_continuous
        if self.width is not None and nc:
            v *= math.exp(-float(z[:nc] @ z[:nc]) / (2.0 * self.width**2))
        if self.chain_values is not None and spec.has_chain:
            v *= self.chain_values[int(z[-1])]
        return v

    def pack(self):
        pf = np.array([self.width if self.width is not None else 0.0], dtype=np.float64)
        cv = np.array(self.chain_values if self.chain_values is not None else (), dtype=np.float64)
        return pf, cv


@njit
def advance_point(pos, i, dt, mi, mf, lo, hi, Q, rng):
    """Move row ``i`` of ``pos`` forward by ``dt`` in place.

    Returns the elapsed time at which the point was killed, or -1.0 when it
    survived the whole interval.
    """
    if dt <= 0.0:
        return -1.0
    kind = mi[0]
    nc = mi[1]
    sigma = mf[0]
    if kind == 1:
        nsub = int(math.ceil(dt / mf[1]))
        if nsub < 1:
            nsub = 1
        h = dt / nsub
        sh = sigma * math.sqrt(h)
        for s in range(nsub):
            out = False
            for c in range(nc):
                pos[i, c] += sh * rng.standard_normal()
                if pos[i, c] < lo[c] or pos[i, c] > hi[c]:
                    out = True
            if out:
                return (s + 1) * h
        return -1.0
    if kind == 0 or kind == 3:
        sd = sigma * math.sqrt(dt)
        for c in range(nc):
            pos[i, c] += sd * rng.standard_normal()
    if kind == 2 or kind == 3:
        s = int(pos[i, nc])
        rem = dt
        while True:
            rate = -Q[s, s]
            if rate <= 0.0:
                break
            hold = exp_draw(rng, rate)
            if hold >= rem:
                break
            rem -= hold
            u = rng.random() * rate
            acc = 0.0
            nxt = -1
            for j in range(Q.shape[0]):
                if j == s or Q[s, j] <= 0.0:
                    continue
                acc += Q[s, j]
                nxt = j
                if u < acc:
                    break
            s = nxt
        pos[i, nc] = s
    return -1.0


def sample_transition(spec: MovementSpec, z, dt: float, rng: np.random.Generator):
    """Draw the position after ``dt``; returns ``CEMETERY`` if the particle was killed."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if z is CEMETERY:
        return CEMETERY
    z = spec.check_point(z)
    buf = z.reshape(1, -1).copy()
    mi, mf, lo, hi, q = spec.pack()
    killed = advance_point(buf, 0, float(dt), mi, mf, lo, hi, q, rng)
    if killed >= 0.0:
        return CEMETERY
    return buf[0]


@njit
def _advance_rows(pos, dt, mi, mf, lo, hi, Q, rng):
    killed = np.zeros(pos.shape[0], dtype=np.bool_)
    for i in range(pos.shape[0]):
        killed[i] = advance_point(pos, i, dt, mi, mf, lo, hi, Q, rng) >= 0.0
    return killed


def sample_transitions(spec: MovementSpec, z, dt: float, rng: np.random.Generator, size: int):
    """``size`` independent draws from ``z`` over ``dt``.

    Returns ``(points, killed)``; rows flagged in ``killed`` are in the cemetery.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    z = spec.check_point(z)
    buf = np.repeat(z.reshape(1, -1), int(size), axis=0)
    mi, mf, lo, hi, q = spec.pack()
    killed = _advance_rows(buf, float(dt), mi, mf, lo, hi, q, rng)
    return buf, killed


def _require_bump(spec: MovementSpec, profile: Profile, what: str):
    if spec.kind != "brownian" or profile.width is None:
        raise ValueError(f"no closed-form {what} for {spec.kind} with this profile")


def kernel_expectation(spec: MovementSpec, profile: Profile, z, t: float) -> float:
    """E[phi(z + sigma B_t)] for a Gaussian bump ``phi`` of width ``a``:
    ``(a^2/(a^2+sigma^2 t))^(d/2) exp(-|z|^2 / (2(a^2+sigma^2 t)))``."""
    _require_bump(spec, profile, "kernel")
    if t < 0:
        raise ValueError("t must be non-negative")
    z = spec.check_point(z)
    a2 = profile.width**2
    s2 = a2 + spec.sigma**2 * t
    return (a2 / s2) ** (spec.dimension / 2.0) * math.exp(-float(z @ z) / (2.0 * s2))


def generator_apply_movement(spec: MovementSpec, profile: Profile, z) -> float:
    z = spec.check_point(z)
    if spec.kind == "brownian":
        _require_bump(spec, profile, "generator")
        return _bm_generator(spec, profile, z)
    if spec.kind == "chain":
        return _chain_generator(spec, profile, z)
    if spec.kind == "brownian_chain":
        if profile.width is None:
            raise ValueError("no closed-form generator without a bump width")
        nc = spec.n_continuous
        x = z[:nc]
        bump = math.exp(-float(x @ x) / (2.0 * profile.width**2))
        psi = 1.0 if profile.chain_values is None else profile.chain_values[int(z[-1])]
        return _bm_generator(spec, profile, z) * psi + bump * _chain_generator(spec, profile, z)
    raise ValueError(f"no closed-form generator for {spec.kind}")


def _bm_generator(spec, profile, z):
    nc = spec.n_continuous
    x = z[:nc]
    a2 = profile.width**2
    r2 = float(x @ x)
    phi = math.exp(-r2 / (2.0 * a2))
    # Laplacian of the bump: phi * (|x|^2/a^4 - d/a^2)
    return 0.5 * spec.sigma**2 * phi * (r2 / a2**2 - nc / a2)


def _chain_generator(spec, profile, z):
    if profile.chain_values is None:
        return 0.0
    if len(profile.chain_values) != spec.n_states:
        raise ValueError("chain profile length must equal the number of states")
    s = int(z[-1])
    psi = np.asarray(profile.chain_values)
    row = spec.rates[s]
    return float(sum(row[j] * (psi[j] - psi[s]) for j in range(spec.n_states) if j != s))


def point_distance(spec: MovementSpec | None, z, w) -> float:
    """Metric on single points: Euclidean on Brownian coordinates plus the
    discrete 0/1 metric on the chain state."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.shape != w.shape:
        raise ValueError("point dimension mismatch")
    if spec is None or not spec.has_chain:
        return float(np.linalg.norm(z - w))
    nc = spec.n_continuous
    d = float(np.linalg.norm(z[:nc] - w[:nc])) if nc else 0.0
    return d + (0.0 if z[-1] == w[-1] else 1.0)
