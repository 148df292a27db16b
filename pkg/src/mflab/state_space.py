"""Proportion vectors over super-node configurations and the metrics on them.

A super-node configuration is a tuple ``(u_0, ..., u_k)`` of queue lengths:
the observed node followed by its ``k`` ring neighbours.  A proportion vector
maps configurations to the fraction of super nodes in that configuration and
is stored sparsely; absent keys mean zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError

SuperNodeVector = tuple[int, ...]

SUM_TOL = 1e-12
DIVISIBILITY_TOL = 1e-9


def make_supernode(coords: Iterable[int], k: int | None = None) -> SuperNodeVector:
    u = tuple(int(c) for c in coords)
    if k is not None and len(u) != k + 1:
        raise DimensionError(f"expected {k + 1} coordinates, got {len(u)}")
    if any(c < 0 for c in u):
        raise ValueError(f"negative queue length in {u}")
    return u


@dataclass(frozen=True)
class ProportionVector:
    """Sparse map from super-node tuples to fractions.

    Values may be floats or :class:`fractions.Fraction`; the empirical
    proportion of a network state uses exact fractions.
    """

    entries: Mapping[SuperNodeVector, float]
    k: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for u in self.entries:
            if len(u) != self.k + 1:
                raise DimensionError(f"key {u} does not have {self.k + 1} coordinates")

    def __getitem__(self, u: SuperNodeVector) -> float:
        return self.entries.get(u, 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def total(self) -> float:
        return math.fsum(float(v) for v in self.entries.values())

    def support(self) -> set[SuperNodeVector]:
        return {u for u, v in self.entries.items() if v != 0}

    def to_dense(self, cap: int) -> np.ndarray:
        """Dense array over ``{0..cap}^(k+1)``; mass outside the box is dropped."""
        out = np.zeros((cap + 1,) * (self.k + 1))
        for u, v in self.entries.items():
            if max(u) <= cap:
                out[u] = float(v)
        return out

    @classmethod
    def from_dense(cls, arr: np.ndarray, *, drop_zeros: bool = True) -> "ProportionVector":
        k = arr.ndim - 1
        if drop_zeros:
            idx = np.argwhere(arr != 0)
        else:
            idx = np.argwhere(np.ones_like(arr, dtype=bool))
        entries = {tuple(int(c) for c in row): float(arr[tuple(row)]) for row in idx}
        return cls(entries, k)

    def to_json_dict(self) -> dict[str, float]:
        keys = sorted(self.entries)
        return {",".join(str(c) for c in u): float(self.entries[u]) for u in keys}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, float], k: int | None = None) -> "ProportionVector":
        entries = {}
        for key, value in data.items():
            entries[tuple(int(c) for c in key.split(","))] = float(value)
        if k is None:
            if not entries:
                raise ValueError("cannot infer k from an empty vector")
            k = len(next(iter(entries))) - 1
        return cls(entries, k)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=False)


def validate_membership(z: ProportionVector, n: int | None = None) -> bool:
    """Check that ``z`` lies in the mean-field space, or in the level-``n`` lattice.

    With ``n`` given, every ``n * z_u`` must also be an integer.
    """
    values = [float(v) for v in z.entries.values()]
    if any(v < 0.0 or v > 1.0 for v in values):
        return False
    if abs(math.fsum(values) - 1.0) > SUM_TOL:
        return False
    if n is not None:
        for v in values:
            scaled = n * v
            if abs(scaled - round(scaled)) > DIVISIBILITY_TOL:
                return False
    return True


def _check_k(z: ProportionVector, zp: ProportionVector) -> None:
    if z.k != zp.k:
        raise DimensionError(f"k mismatch: {z.k} vs {zp.k}")


def rho_distance(z: ProportionVector, zp: ProportionVector) -> float:
    """Weighted sup distance ``sup_u |z_u - z'_u| / (u_k + 1)``.

    The supremum runs over every index tuple; the weight uses the last
    coordinate only.
    """
    _check_k(z, zp)
    best = 0.0
    a, b = z.entries, zp.entries
    for u in a.keys() | b.keys():
        d = abs(float(a.get(u, 0.0)) - float(b.get(u, 0.0))) / (u[-1] + 1)
        if d > best:
            best = d
    return best


def sup_distance(z: ProportionVector, zp: ProportionVector) -> float:
    _check_k(z, zp)
    a, b = z.entries, zp.entries
    return max((abs(float(a.get(u, 0.0)) - float(b.get(u, 0.0))) for u in a.keys() | b.keys()), default=0.0)


def total_variation(z: ProportionVector, zp: ProportionVector) -> float:
    _check_k(z, zp)
    a, b = z.entries, zp.entries
    return 0.5 * math.fsum(abs(float(a.get(u, 0.0)) - float(b.get(u, 0.0))) for u in a.keys() | b.keys())
