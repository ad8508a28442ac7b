"""Mixed-moment bases, vectors, and deterministic moment evaluation.

A mixed moment is a product of normalized traces of matrix powers and is
keyed by the weakly decreasing tuple of those powers.  The empty key is a
first-class basis element standing for the constant 1, which lets affine
moment relations act as plain linear maps.

Canonical basis order: weight ascending, and within a weight tuples in
descending lexicographic order, so for weight 3 the order is (3), (2, 1),
(1, 1, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import BasisMismatchError, DimensionError, FileFormatError
from .combinat import SetPartition

PartKey = tuple[int, ...]
PairKey = tuple[PartKey, PartKey]
Value = Union[Fraction, float]

# Deterministic matrices are labeled; products are requested by label words.
DetMatrixSet = Mapping[str, np.ndarray]


def as_key(parts: Iterable[int]) -> PartKey:
    key = tuple(sorted((int(p) for p in parts), reverse=True))
    if any(p < 1 for p in key):
        raise ValueError(f"parts must be positive: {key}")
    return key


def weight(key: PartKey) -> int:
    return sum(key)


def partitions_of(w: int) -> list[PartKey]:
    """Integer partitions of w as weakly decreasing tuples, descending lexicographic."""
    if w == 0:
        return [()]
    out: list[PartKey] = []

    def extend(prefix: list[int], remaining: int, cap: int):
        if remaining == 0:
            out.append(tuple(prefix))
            return
        for part in range(min(cap, remaining), 0, -1):
            prefix.append(part)
            extend(prefix, remaining - part, part)
            prefix.pop()

    extend([], w, w)
    return out


def basis(P: int, sided: str = "one") -> list:
    """All keys of weight <= P including the empty key, in canonical order.

    Two-sided keys are pairs of one-sided keys (first component major).
    """
    if P < 0:
        raise ValueError("P must be >= 0")
    one: list[PartKey] = []
    for w in range(P + 1):
        one.extend(partitions_of(w))
    if sided == "one":
        return one
    if sided == "two":
        return [(r, s) for r in one for s in one]
    raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")


def index_of(keys: Sequence, key) -> int:
    try:
        return keys.index(key)
    except ValueError:
        raise BasisMismatchError(f"key {key} not in basis")


@dataclass
class MomentVector:
    """Values over a fixed key basis; exact (Fraction) and float values may mix."""

    keys: tuple
    values: dict

    def __post_init__(self):
        self.keys = tuple(self.keys)
        missing = [k for k in self.keys if k not in self.values]
        if missing:
            raise BasisMismatchError(f"missing values for keys {missing[:4]}")

    @classmethod
    def from_values(cls, values: Mapping, keys: Sequence | None = None) -> "MomentVector":
        if keys is None:
            keys = list(values)
        return cls(tuple(keys), dict(values))

    @classmethod
    def constant_one(cls, keys: Sequence) -> "MomentVector":
        """The vector of a zero-weight observable: 1 at the empty key, 0 elsewhere."""
        empty = () if not isinstance(keys[0], tuple) or keys[0] == () else keys[0]
        vals = {k: (Fraction(1) if k == empty else Fraction(0)) for k in keys}
        return cls(tuple(keys), vals)

    def __getitem__(self, key) -> Value:
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def exact(self) -> bool:
        return all(isinstance(v, (Fraction, int)) for v in self.values.values())

    def as_float(self) -> "MomentVector":
        return MomentVector(self.keys, {k: float(v) for k, v in self.values.items()})

    def map_values(self, fn) -> "MomentVector":
        return MomentVector(self.keys, {k: fn(k, v) for k, v in self.values.items()})


def _eigs_of(A) -> tuple[np.ndarray | list, int]:
    if isinstance(A, np.ndarray):
        if A.ndim == 1:
            return A, len(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"need a square matrix, got shape {A.shape}", dims=A.shape)
        return np.linalg.eigvalsh(A), A.shape[0]
    eigs = list(A)
    return eigs, len(eigs)


def eval_mixed_moments(A, P: int, keys: Sequence[PartKey] | None = None) -> MomentVector:
    """Mixed moments of one deterministic matrix or eigenvalue list.

    The value at key (p_1, ..., p_k) is the product of normalized traces
    tr(A^{p_i}).  Exact inputs (lists of ints/Fractions) give exact values.
    """
    if keys is None:
        keys = basis(P)
    eigs, dim = _eigs_of(A)
    exact = not isinstance(eigs, np.ndarray) and all(
        isinstance(x, (int, Fraction)) for x in eigs
    )
    max_p = max((max(k) for k in keys if k), default=0)
    powers: dict[int, Value] = {}
    for p in range(1, max_p + 1):
        if exact:
            powers[p] = Fraction(sum(x**p for x in eigs), dim)
        else:
            powers[p] = float(np.sum(np.asarray(eigs, dtype=float) ** p) / dim)
    values: dict[PartKey, Value] = {}
    for key in keys:
        acc: Value = Fraction(1) if exact else 1.0
        for p in key:
            acc = acc * powers[p]
        values[key] = acc
    return MomentVector(tuple(keys), values)


def scaled_moments(A, P: int, scale: float | Fraction) -> MomentVector:
    """Mixed moments of scale * A, via eigenvalue scaling."""
    eigs, dim = _eigs_of(A)
    if isinstance(eigs, np.ndarray):
        return eval_mixed_moments(np.asarray(eigs) * float(scale), P)
    return eval_mixed_moments([x * scale for x in eigs], P)


def pair_vector(r: MomentVector, s: MomentVector) -> MomentVector:
    """Joint moments of two independent inputs: the outer product of vectors."""
    keys = [(rk, sk) for rk in r.keys for sk in s.keys]
    values = {(rk, sk): r[rk] * s[sk] for rk in r.keys for sk in s.keys}
    return MomentVector(tuple(keys), values)


def d_rho(matrices: DetMatrixSet, rho: SetPartition, word: Sequence[str]) -> complex | float:
    """Product over blocks of normalized traces of block-ordered matrix products.

    ``word[i-1]`` names the matrix standing at ground element i; within a
    block the factors are multiplied in ascending element order.
    """
    total = 1.0
    for block in rho.blocks:
        prod = None
        for e in block:
            label = word[e - 1]
            if label not in matrices:
                raise KeyError(f"no matrix bound to label {label!r}")
            m = np.asarray(matrices[label])
            prod = m if prod is None else prod @ m
        if prod.shape[0] != prod.shape[1]:
            raise DimensionError(
                f"block {block} multiplies to non-square shape {prod.shape}",
                dims=prod.shape,
            )
        val = np.trace(prod) / prod.shape[0]
        total = total * val
    if isinstance(total, complex) and abs(total.imag) < 1e-14 * (1 + abs(total.real)):
        return total.real
    return total


# -- file formats ------------------------------------------------------------

def _key_str(key) -> str:
    if isinstance(key, tuple) and key and isinstance(key[0], tuple):
        return _key_str(key[0]) + "|" + _key_str(key[1])
    return ",".join(str(p) for p in key) if key else "-"


def _key_from_str(s: str):
    s = s.strip()
    if "|" in s:
        left, right = s.split("|", 1)
        return (_key_from_str(left), _key_from_str(right))
    if s == "-":
        return ()
    try:
        return tuple(int(p) for p in s.split(","))
    except ValueError:
        raise FileFormatError(f"bad moment key {s!r}")


def _value_str(v: Value) -> str:
    if isinstance(v, (Fraction, int)):
        f = Fraction(v)
        return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)
    return repr(float(v))


def _value_from_str(s: str) -> Value:
    s = s.strip()
    try:
        if "/" in s:
            num, den = s.split("/")
            return Fraction(int(num), int(den))
        if s.lstrip("+-").isdigit():
            return Fraction(int(s))
        return float(s)
    except (ValueError, ZeroDivisionError):
        raise FileFormatError(f"bad moment value {s!r}")


def write_moments(mv: MomentVector, path: str):
    """One record per key: the key (comma-separated parts, '-' when empty), a space, the value."""
    if str(path).endswith(".json"):
        payload = {_key_str(k): _value_str(mv[k]) for k in mv.keys}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=0, sort_keys=False)
            fh.write("\n")
        return
    with open(path, "w") as fh:
        for key in mv.keys:
            fh.write(f"{_key_str(key)} {_value_str(mv[key])}\n")


def read_moments(path: str) -> MomentVector:
    keys: list = []
    values: dict = {}
    try:
        if str(path).endswith(".json"):
            with open(path) as fh:
                payload = json.load(fh)
            if not isinstance(payload, dict):
                raise FileFormatError(f"{path}: expected a JSON object")
            for ks, vs in payload.items():
                key = _key_from_str(ks)
                keys.append(key)
                values[key] = _value_from_str(str(vs))
        else:
            with open(path) as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    parts = line.split(None, 1)
                    if len(parts) != 2:
                        raise FileFormatError(f"{path}:{lineno}: expected 'key value'")
                    key = _key_from_str(parts[0])
                    keys.append(key)
                    values[key] = _value_from_str(parts[1])
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON: {exc}")
    if len(set(keys)) != len(keys):
        raise FileFormatError(f"{path}: duplicate keys")
    return MomentVector(tuple(keys), values)
