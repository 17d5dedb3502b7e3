"""
Rotated triangular lattice geometry and the site-addressed random environment.

The lattice is L = {(n, m) in Z^2 : n >= 0, n + m even}. An open site at
(n, m) has directed edges to (n+1, m+1), (n+2, m) and (n+1, m-1); a site is
always connected to itself, but outgoing steps require the site to be open.

Openness at density p is derived from a stateless keyed mix of (seed, n, m):
three rounds of the splitmix64 finalizer, top 53 bits scaled to [0, 1).
Because the uniform draw is a pure function of (seed, site), environments are
never stored, replicas are embarrassingly parallel, and all densities share
one coupled field: a site open at p is open at every p' >= p under the same
seed.  Comparisons ``U < p`` are exact binary64 comparisons, so results are
bit-reproducible across runs, processes and worker counts.

Two coordinate frames are used.  The "rotated" frame (n, m) above is the
native simulation frame.  The "reflected" frame (x, y) = ((n-m)/2, (n+m)/2)
turns the three edges into steps (0,1), (1,0) and (1,1); cluster boundary
slopes are measured there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

#: Identifier of the keyed-mix function, recorded in all result metadata so
#: golden files stay comparable if the mix is ever revised.
HASH_SPEC = "splitmix64-cascade-v1"

_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_SALT_SITE = np.uint64(0x8AE3F5A1D0C4B7E9)
_SALT_DERIVE = np.uint64(0x6C62272E07BB0142)
_TWO_NEG_53 = 2.0**-53
_U64_MAX = 2**64


def _mix64(z):
    """splitmix64 finalizer; accepts uint64 scalars or arrays, wraps mod 2^64."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def _as_u64(v) -> np.ndarray:
    """Two's-complement cast of signed integers (scalars or arrays) to uint64."""
    return np.asarray(v, dtype=np.int64).astype(np.uint64)


class SiteR(NamedTuple):
    """Site of the rotated lattice; n is the level, m the height, n+m even."""

    n: int
    m: int


class SiteRef(NamedTuple):
    """Site in the reflected frame, where edges point up, right and up-right."""

    x: int
    y: int


def in_lattice(n: int, m: int) -> bool:
    return n >= 0 and (n + m) % 2 == 0


def site(n: int, m: int) -> SiteR:
    """Validated SiteR constructor."""
    if not in_lattice(n, m):
        raise ValueError(f"({n}, {m}) is not a lattice site: need n >= 0 and n+m even")
    return SiteR(n, m)


def neighbors(s: SiteR) -> tuple[SiteR, SiteR, SiteR]:
    """The three sites an open site at s connects to."""
    n, m = s
    if not in_lattice(n, m):
        raise ValueError(f"({n}, {m}) is not a lattice site")
    return (SiteR(n + 1, m + 1), SiteR(n + 2, m), SiteR(n + 1, m - 1))


def to_reflected(s: SiteR) -> SiteRef:
    """Rotated (n, m) -> reflected ((n-m)/2, (n+m)/2); exact since n+m is even."""
    n, m = s
    if (n + m) % 2 != 0:
        raise ValueError(f"({n}, {m}) has odd coordinate sum")
    return SiteRef((n - m) // 2, (n + m) // 2)


def to_rotated(s: SiteRef) -> SiteR:
    """Reflected (x, y) -> rotated (x+y, y-x); requires x+y >= 0 to land in L."""
    x, y = s
    if x + y < 0:
        raise ValueError(f"reflected point ({x}, {y}) maps to level {x + y} < 0")
    return SiteR(x + y, y - x)


@dataclass(frozen=True)
class EnvField:
    """Deterministic coupled environment: uniform(seed, n, m) in [0, 1)."""

    seed: int
    hash_spec: str = HASH_SPEC

    def __post_init__(self):
        if not 0 <= self.seed < _U64_MAX:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.hash_spec != HASH_SPEC:
            raise ValueError(f"unsupported hash spec {self.hash_spec!r}")

    def uniform(self, s: SiteR) -> float:
        """The site's uniform draw; pure function of (seed, n, m)."""
        h = _mix64(np.uint64(self.seed) ^ _SALT_SITE)
        h = _mix64(h ^ _as_u64(s[0]))
        h = _mix64(h ^ _as_u64(s[1]))
        return float(h >> np.uint64(11)) * _TWO_NEG_53

    def is_open(self, s: SiteR, p: float) -> bool:
        return self.uniform(s) < p


def uniform(f: EnvField, s: SiteR) -> float:
    return f.uniform(s)


def is_open(f: EnvField, s: SiteR, p: float) -> bool:
    """Openness of s at density p: exact binary64 comparison uniform < p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not in_lattice(*s):
        raise ValueError(f"({s[0]}, {s[1]}) is not a lattice site")
    return f.uniform(s) < p


def derive_seed(master: int, index: int) -> int:
    """Derived 64-bit key for replica or stream `index` under a master seed.

    Keyed so that sweeps are reproducible and extensible: replica r always
    sees the same environment no matter how many replicas run or in what
    order.
    """
    h = _mix64(np.uint64(master % _U64_MAX) ^ _SALT_DERIVE)
    h = _mix64(h ^ _as_u64(index))
    return int(h)


def replica_seeds(master: int, lo: int, hi: int) -> np.ndarray:
    """Vectorised derive_seed for the replica index range [lo, hi)."""
    h = _mix64(np.uint64(master % _U64_MAX) ^ _SALT_DERIVE)
    return _mix64(h ^ np.arange(lo, hi, dtype=np.uint64))


# --- vectorised internals used by the frontier engines ---


def seed_mix(seeds) -> np.ndarray:
    """First mix round for an array of seeds (cacheable by engines)."""
    return _mix64(_as_u64(seeds) ^ _SALT_SITE)


def level_uniforms(seed_state: np.ndarray, n: int, heights: np.ndarray) -> np.ndarray:
    """Uniforms for all (n, m) with m in `heights`, per pre-mixed seed row.

    seed_state has shape (B,) (from seed_mix), heights (W,); returns (B, W).
    Bit-identical to EnvField.uniform site by site.
    """
    hn = _mix64(seed_state ^ _as_u64(n))
    h = _mix64(hn[:, None] ^ _as_u64(heights)[None, :])
    return (h >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53


def site_uniforms(seed_state: np.ndarray, ns: np.ndarray, ms: np.ndarray) -> np.ndarray:
    """Uniforms for per-position (n, m) pairs (broadcast against seed rows)."""
    h = _mix64(seed_state[:, None] ^ _as_u64(ns)[None, :])
    h = _mix64(h ^ _as_u64(ms)[None, :])
    return (h >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
