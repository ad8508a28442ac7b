"""Compile moment recursions into transfer maps over the mixed-moment basis.

Each supported model family relates the mixed moments of an input ensemble
to those of an output ensemble through an exact linear map whose entries
are Laurent polynomials in the matrix dimensions.  The four families:

* ``wishart_product_transfer``: sandwich products (1/N) R X S X^H with X a
  rectangular standard complex Gaussian matrix; one-sided fixes S = I.
* ``gauss_sum_transfer``: additive models (1/N)(R + sX)(S + sX)^H mapping
  moments of (1/N) R S^H.
* ``selfadj_product_transfer``: R X / sqrt(n) with X selfadjoint Gaussian.
* ``selfadj_sum_transfer``: (R + sX) / sqrt(n) with X selfadjoint Gaussian.

Maps are built symbolically once per (family, P, sigma^2) and cached; the
(n, N) binding requested at construction is recorded in ``params`` and used
when the map is applied numerically.  ``compile_model`` assembles model
expressions into pipelines of bound maps, applied innermost first.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import coeffring
from .coeffring import CoeffPoly
from .combinat import (
    CircleLayout,
    PartialPermutation,
    block_stats,
    blocks_meeting,
    det_edges_of,
    enumerate_partial_permutations,
    enumerate_permutations,
    rho_of,
    rho_sa_of,
    sa_det_edges_of,
    sigma_of,
    sigma_sa_of,
)
from .errors import BasisMismatchError, DimensionError
from .momentspace import (
    MomentVector,
    PartKey,
    as_key,
    basis,
    eval_mixed_moments,
    pair_vector,
    scaled_moments,
    weight,
)

ZERO = CoeffPoly.zero()
ONE = CoeffPoly.one()


def _sigma2(sigma) -> Fraction:
    s = sigma if isinstance(sigma, Fraction) else Fraction(str(sigma))
    if s < 0:
        raise ValueError("sigma must be >= 0")
    return s * s


# -- transfer maps -----------------------------------------------------------

@dataclass
class TransferMap:
    """Sparse matrix of CoeffPoly over explicit input/output key bases."""

    kind: str
    in_basis: tuple
    out_basis: tuple
    entries: dict  # (out_key, in_key) -> CoeffPoly
    params: dict = field(default_factory=dict)

    def entry(self, out_key, in_key) -> CoeffPoly:
        return self.entries.get((out_key, in_key), ZERO)

    def row(self, out_key) -> dict:
        return {ik: poly for (ok, ik), poly in self.entries.items() if ok == out_key}

    def bound_dims(self) -> tuple[int, int]:
        n = self.params.get("n")
        N = self.params.get("N", n)
        if n is None:
            raise ValueError(f"map {self.kind} has no bound dimensions")
        return n, N

    def matrix(self, n=None, N=None) -> list[list[Fraction]]:
        """Dense exact matrix at the given (or bound) dimensions."""
        if n is None:
            n, N = self.bound_dims()
        if N is None:
            N = n
        return [
            [self.entry(ok, ik).eval(n, N) for ik in self.in_basis]
            for ok in self.out_basis
        ]

    def matrix_float(self, n=None, N=None) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.matrix(n, N)])

    def apply(self, vec: MomentVector, n=None, N=None) -> MomentVector:
        """Matrix-vector product; exact when the vector is exact."""
        if n is None and "n" in self.params:
            n, N = self.bound_dims()
        if N is None:
            N = n
        for key in self.in_basis:
            if key not in vec.values:
                raise BasisMismatchError(f"input vector lacks key {key}")
        out: dict = {}
        exact = vec.exact
        cache: dict = {}
        for (ok, ik), poly in self.entries.items():
            coeff = cache.get((ok, ik))
            if coeff is None:
                coeff = poly.eval(n, N)
                cache[(ok, ik)] = coeff
            contrib = (coeff if exact else float(coeff)) * vec[ik]
            out[ok] = out.get(ok, Fraction(0) if exact else 0.0) + contrib
        values = {ok: out.get(ok, Fraction(0) if exact else 0.0) for ok in self.out_basis}
        return MomentVector(tuple(self.out_basis), values)

    def compose(self, inner: "TransferMap") -> "TransferMap":
        """self after inner, as one symbolic map (bases must line up)."""
        if tuple(inner.out_basis) != tuple(self.in_basis):
            raise BasisMismatchError("composition bases do not match")
        by_out: dict = {}
        for (mid, ik), poly in inner.entries.items():
            by_out.setdefault(mid, {})[ik] = poly
        entries: dict = {}
        for (ok, mid), left in self.entries.items():
            for ik, right in by_out.get(mid, {}).items():
                prod = left * right
                if prod.is_zero:
                    continue
                key = (ok, ik)
                acc = entries.get(key)
                entries[key] = prod if acc is None else acc + prod
        entries = {k: v for k, v in entries.items() if not v.is_zero}
        return TransferMap(
            kind=f"{self.kind}.{inner.kind}",
            in_basis=tuple(inner.in_basis),
            out_basis=tuple(self.out_basis),
            entries=entries,
            params=dict(self.params),
        )

    def weight_blocks(self) -> dict[int, tuple[list, list]]:
        """Group one-sided bases by weight: weight -> (out keys, in keys)."""
        blocks: dict[int, tuple[list, list]] = {}
        for k in self.out_basis:
            blocks.setdefault(weight(k), ([], []))[0].append(k)
        for k in self.in_basis:
            blocks.setdefault(weight(k), ([], []))[1].append(k)
        return blocks


def identity_transfer(P: int, kind: str = "identity", **params) -> TransferMap:
    keys = tuple(basis(P))
    entries = {(k, k): ONE for k in keys}
    return TransferMap(kind, keys, keys, entries, {"P": P, **params})


def diagonal_transfer(P: int, scale_fn, kind: str = "diagonal", **params) -> TransferMap:
    """Diagonal map with entry scale_fn(key) (a CoeffPoly) at each key."""
    keys = tuple(basis(P))
    entries = {}
    for k in keys:
        poly = scale_fn(k)
        if not isinstance(poly, CoeffPoly):
            poly = CoeffPoly.constant(poly)
        if not poly.is_zero:
            entries[(k, k)] = poly
    return TransferMap(kind, keys, keys, entries, {"P": P, **params})


# -- enumeration cores -------------------------------------------------------

_term_cache: dict = {}


def _wishart_terms(out_key: PartKey) -> dict[tuple[PartKey, PartKey], CoeffPoly]:
    """Aggregate pairing contributions for one output key of a sandwich product.

    Returns (R-key, S-key) -> coefficient, where the R-key collects odd
    block sizes and the S-key even block sizes of the glued-diagram vertex
    partition, with coefficient N^(k - p) n^(l - #traces).
    """
    cache_key = ("t3", out_key)
    if cache_key in _term_cache:
        return _term_cache[cache_key]
    p = weight(out_key)
    k_traces = len(out_key)
    layout = CircleLayout.doubled(out_key)
    acc: dict[tuple[PartKey, PartKey], CoeffPoly] = {}
    for pi in enumerate_permutations(p):
        pp = PartialPermutation.full(pi)
        rho = rho_of(pp, layout)
        stats = block_stats(rho, (), layout)
        r_key = stats.odd_block_sizes
        s_key = stats.even_block_sizes
        mono = CoeffPoly.monomial(stats.l - k_traces, stats.k - p)
        key = (r_key, s_key)
        acc[key] = acc.get(key, ZERO) + mono
    _term_cache[cache_key] = acc
    return acc


def _gauss_sum_terms(out_key: PartKey, sigma2: Fraction) -> dict[PartKey, CoeffPoly]:
    """Aggregate partial-pairing contributions for one output key of an additive model."""
    cache_key = ("t4", out_key, sigma2)
    if cache_key in _term_cache:
        return _term_cache[cache_key]
    p = weight(out_key)
    k_traces = len(out_key)
    layout = CircleLayout.doubled(out_key)
    acc: dict[PartKey, CoeffPoly] = {}
    for pp in enumerate_partial_permutations(p):
        rho = rho_of(pp, layout)
        dets = det_edges_of(pp)
        sig = sigma_of(pp, layout, dets, rho)
        stats = block_stats(rho, dets, layout)
        sizes = []
        for block in sig.blocks:
            if len(block) % 2:
                raise AssertionError(f"odd deterministic cycle {block}")
            sizes.append(len(block) // 2)
        in_key = tuple(sorted(sizes, reverse=True))
        n_exp = stats.l - stats.ld + sig.num_blocks - k_traces
        N_exp = stats.k - stats.kd - pp.size
        mono = CoeffPoly.monomial(n_exp, N_exp, sigma2**pp.size)
        acc[in_key] = acc.get(in_key, ZERO) + mono
    _term_cache[cache_key] = acc
    return acc


def _full_disjoint_pairings(p: int, m: int) -> Iterable[PartialPermutation]:
    """Disjoint partial permutations of size m over {1..p}."""
    universe = range(1, p + 1)
    for rho1 in itertools.combinations(universe, m):
        rest = [i for i in universe if i not in rho1]
        for rho2 in itertools.combinations(rest, m):
            for images in itertools.permutations(rho2):
                yield PartialPermutation(p, rho1, rho2, images)


def _selfadj_product_terms(out_key: PartKey) -> dict[PartKey, CoeffPoly]:
    """Aggregate contributions for one output key of a selfadjoint product."""
    cache_key = ("t5", out_key)
    if cache_key in _term_cache:
        return _term_cache[cache_key]
    p = weight(out_key)
    k_traces = len(out_key)
    acc: dict[PartKey, CoeffPoly] = {}
    if p % 2 == 0:
        layout = CircleLayout(out_key)
        half = p // 2
        coeff = Fraction(1, 2**half)
        for pp in _full_disjoint_pairings(p, half):
            rsa = rho_sa_of(pp, layout)
            in_key = rsa.block_sizes()
            mono = CoeffPoly.monomial(rsa.num_blocks - half - k_traces, 0, coeff)
            acc[in_key] = acc.get(in_key, ZERO) + mono
    _term_cache[cache_key] = acc
    return acc


def _selfadj_sum_terms(out_key: PartKey, sigma2: Fraction) -> dict[PartKey, CoeffPoly]:
    """Aggregate contributions for one output key of a selfadjoint additive model."""
    cache_key = ("t6", out_key, sigma2)
    if cache_key in _term_cache:
        return _term_cache[cache_key]
    p = weight(out_key)
    k_traces = len(out_key)
    layout = CircleLayout(out_key)
    acc: dict[PartKey, CoeffPoly] = {}
    for m in range(p // 2 + 1):
        for pp in _full_disjoint_pairings(p, m):
            rsa = rho_sa_of(pp, layout)
            ssa = sigma_sa_of(pp, layout, rsa)
            dets = sa_det_edges_of(pp)
            d = blocks_meeting(rsa, dets, layout)
            in_key = ssa.block_sizes()
            n_exp = rsa.num_blocks - m - d - k_traces + ssa.num_blocks
            mono = CoeffPoly.monomial(n_exp, 0, Fraction(sigma2**m, 2**m))
            acc[in_key] = acc.get(in_key, ZERO) + mono
    _term_cache[cache_key] = acc
    return acc


# -- map constructors --------------------------------------------------------

_map_cache: dict = {}


def _cached_map(cache_key, build):
    if cache_key in _map_cache:
        return _map_cache[cache_key]
    cache_dir = os.environ.get("FINMOM_CACHE")
    path = None
    if cache_dir:
        from . import mapio

        os.makedirs(cache_dir, exist_ok=True)
        fname = "_".join(str(part) for part in cache_key).replace("/", "_")
        path = os.path.join(cache_dir, fname + ".tmap")
        if os.path.exists(path):
            tm = mapio.load_transfer(path)
            _map_cache[cache_key] = tm
            return tm
    tm = build()
    _map_cache[cache_key] = tm
    if path:
        from . import mapio

        mapio.save_transfer(tm, path)
    return tm


def wishart_product_transfer(n: int, N: int, P: int, sided: str = "one") -> TransferMap:
    """Moment map of (1/N) R X S X^H from joint input moments of (R, S).

    One-sided fixes S = I (every S-moment is 1) and maps the one-sided
    basis to itself; two-sided maps pair keys (R-key, S-key) to one-sided
    output keys.  The map is weight-homogeneous.
    """
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")

    def build():
        out_keys = tuple(basis(P))
        entries: dict = {}
        if sided == "one":
            in_keys = out_keys
            for ok in out_keys:
                if ok == ():
                    entries[((), ())] = ONE
                    continue
                for (rk, _sk), poly in _wishart_terms(ok).items():
                    key = (ok, rk)
                    entries[key] = entries.get(key, ZERO) + poly
        else:
            in_keys = tuple(basis(P, "two"))
            for ok in out_keys:
                if ok == ():
                    entries[((), ((), ()))] = ONE
                    continue
                for pair, poly in _wishart_terms(ok).items():
                    key = (ok, pair)
                    entries[key] = entries.get(key, ZERO) + poly
        entries = {k: v for k, v in entries.items() if not v.is_zero}
        return TransferMap(
            kind="wishart_product",
            in_basis=in_keys,
            out_basis=out_keys,
            entries=entries,
            params={"P": P, "sided": sided},
        )

    tm = _cached_map(("wishart_product", P, sided), build)
    params = dict(tm.params)
    params.update({"n": n, "N": N})
    return TransferMap(tm.kind, tm.in_basis, tm.out_basis, tm.entries, params)


def gauss_sum_transfer(n: int, N: int, P: int, sigma=1) -> TransferMap:
    """Moment map of (1/N)(R + sX)(S + sX)^H from moments of (1/N) R S^H.

    Every pairing of 2m Gaussian factors carries the weight sigma^(2m).
    """
    s2 = _sigma2(sigma)

    def build():
        keys = tuple(basis(P))
        entries: dict = {}
        for ok in keys:
            if ok == ():
                entries[((), ())] = ONE
                continue
            for ik, poly in _gauss_sum_terms(ok, s2).items():
                if not poly.is_zero:
                    entries[(ok, ik)] = poly
        return TransferMap(
            kind="gauss_sum",
            in_basis=keys,
            out_basis=keys,
            entries=entries,
            params={"P": P, "sigma2": s2},
        )

    tm = _cached_map(("gauss_sum", P, s2), build)
    params = dict(tm.params)
    params.update({"n": n, "N": N})
    return TransferMap(tm.kind, tm.in_basis, tm.out_basis, tm.entries, params)


def selfadj_product_transfer(n: int, P: int) -> TransferMap:
    """Moment map of R X / sqrt(n), X selfadjoint Gaussian, from moments of R.

    Odd-weight output rows vanish identically.
    """

    def build():
        keys = tuple(basis(P))
        entries: dict = {}
        for ok in keys:
            if ok == ():
                entries[((), ())] = ONE
                continue
            for ik, poly in _selfadj_product_terms(ok).items():
                if not poly.is_zero:
                    entries[(ok, ik)] = poly
        return TransferMap(
            kind="selfadj_product",
            in_basis=keys,
            out_basis=keys,
            entries=entries,
            params={"P": P},
        )

    tm = _cached_map(("selfadj_product", P), build)
    params = dict(tm.params)
    params.update({"n": n, "N": n})
    return TransferMap(tm.kind, tm.in_basis, tm.out_basis, tm.entries, params)


def selfadj_sum_transfer(n: int, P: int, sigma=1) -> TransferMap:
    """Moment map of (R + sX)/sqrt(n) from moments of R/sqrt(n)."""
    s2 = _sigma2(sigma)

    def build():
        keys = tuple(basis(P))
        entries: dict = {}
        for ok in keys:
            if ok == ():
                entries[((), ())] = ONE
                continue
            for ik, poly in _selfadj_sum_terms(ok, s2).items():
                if not poly.is_zero:
                    entries[(ok, ik)] = poly
        return TransferMap(
            kind="selfadj_sum",
            in_basis=keys,
            out_basis=keys,
            entries=entries,
            params={"P": P, "sigma2": s2},
        )

    tm = _cached_map(("selfadj_sum", P, s2), build)
    params = dict(tm.params)
    params.update({"n": n, "N": n})
    return TransferMap(tm.kind, tm.in_basis, tm.out_basis, tm.entries, params)


# -- direct moment evaluation -------------------------------------------------

def wishart_moment_poly(p: int) -> CoeffPoly:
    """The p-th moment of (1/N) X X^H as an exact polynomial in (n, N)."""
    total = ZERO
    for poly in _wishart_terms((p,)).values():
        total = total + poly
    return total


def corr_wishart_moments(D, E, n: int, N: int, p: int):
    """Expected p-th moment of (1/N) D X E X^H for deterministic D (n x n), E (N x N).

    Exact (a Fraction) when D and E are given as identity (None) or exact
    eigenvalue lists; floating point for numeric matrices.
    """
    d_eigs = _side_eigs(D, n, "D")
    e_eigs = _side_eigs(E, N, "E")
    exact = d_eigs is None or all(isinstance(x, (int, Fraction)) for x in d_eigs)
    exact = exact and (e_eigs is None or all(isinstance(x, (int, Fraction)) for x in e_eigs))
    total = Fraction(0) if exact else 0.0
    for (r_key, s_key), poly in _wishart_terms((p,)).items():
        coeff = poly.eval(n, N)
        term = coeff if exact else float(coeff)
        term = term * _trace_product(d_eigs, r_key, n, exact)
        term = term * _trace_product(e_eigs, s_key, N, exact)
        total = total + term
    return total


def _side_eigs(M, dim: int, name: str):
    if M is None:
        return None
    if isinstance(M, np.ndarray):
        if M.shape != (dim, dim):
            raise DimensionError(
                f"{name} must be {dim}x{dim}, got {M.shape}", dims=(M.shape, (dim, dim))
            )
        return np.linalg.eigvals(M)
    eigs = list(M)
    if len(eigs) != dim:
        raise DimensionError(f"{name} needs {dim} eigenvalues, got {len(eigs)}")
    return eigs


def _trace_product(eigs, key: PartKey, dim: int, exact: bool):
    if eigs is None:
        return Fraction(1) if exact else 1.0
    out = Fraction(1) if exact else 1.0
    for p_i in key:
        if exact:
            out = out * Fraction(sum(x**p_i for x in eigs), dim)
        else:
            out = out * (np.sum(np.asarray(eigs) ** p_i).real / dim)
    return out


# -- model expressions ---------------------------------------------------------

@dataclass(frozen=True)
class DetRef:
    name: str
    rows: int
    cols: int


@dataclass(frozen=True)
class GaussComplex:
    n: int
    N: int
    sigma: Fraction = Fraction(1)


@dataclass(frozen=True)
class GaussSelfAdjoint:
    n: int
    sigma: Fraction = Fraction(1)


@dataclass(frozen=True)
class CorrProduct:
    """(1/N) R X S X^H with X an n x N standard complex Gaussian matrix."""

    r: object
    s: object
    n: int
    N: int


@dataclass(frozen=True)
class GaussSum:
    """(1/N)(D + sX)(D + sX)^H for a rectangular base D and Gaussian X."""

    base: object
    gauss: GaussComplex


@dataclass(frozen=True)
class SelfAdjProduct:
    """R X / sqrt(n) with X selfadjoint Gaussian."""

    r: object
    n: int


@dataclass(frozen=True)
class SelfAdjSum:
    """(R + sX) / sqrt(n) with X selfadjoint Gaussian."""

    r: object
    gauss: GaussSelfAdjoint


@dataclass(frozen=True)
class Chain:
    """D times a product of independent normalized sample covariance factors."""

    base: object
    factors: tuple[GaussComplex, ...]


ModelExpr = object


def observable_dims(model: ModelExpr) -> tuple[int, int]:
    """Dimensions of the matrix the model denotes."""
    if isinstance(model, DetRef):
        return (model.rows, model.cols)
    if isinstance(model, GaussComplex):
        return (model.n, model.n)  # standalone means the normalized gram (1/N) X X^H
    if isinstance(model, GaussSelfAdjoint):
        return (model.n, model.n)
    if isinstance(model, CorrProduct):
        return (model.n, model.n)
    if isinstance(model, GaussSum):
        return (model.gauss.n, model.gauss.n)
    if isinstance(model, SelfAdjProduct):
        return (model.n, model.n)
    if isinstance(model, SelfAdjSum):
        return (model.gauss.n, model.gauss.n)
    if isinstance(model, Chain):
        n = observable_dims(model.base)[0]
        return (n, n)
    raise TypeError(f"not a model expression: {model!r}")


def _is_identity_det(model) -> bool:
    return isinstance(model, DetRef) and model.name == "I"


def _check(cond: bool, msg: str, dims=()):
    if not cond:
        raise DimensionError(msg, dims=dims)


@dataclass
class Pipeline:
    """Bound transfer maps applied innermost-first, plus a leaf descriptor.

    ``leaf`` explains what the input moment vector measures:
      ("matrix", ref)          mixed moments of the bound square matrix,
      ("gram", ref, N)         mixed moments of (1/N) A A^H for rectangular A,
      ("scaled", ref, n)       mixed moments of A / sqrt(n),
      ("pair", r_ref, s_ref)   joint moments for a two-sided first stage,
      ("unit",)                the constant vector (zero-weight input).
    """

    stages: tuple[TransferMap, ...]
    leaf: tuple
    P: int

    def forward(self, vec: MomentVector) -> MomentVector:
        for stage in self.stages:
            vec = stage.apply(vec)
        return vec

    def leaf_vector(self, bindings: dict, exact: bool = False) -> MomentVector:
        kind = self.leaf[0]
        if kind == "unit":
            return MomentVector.constant_one(tuple(basis(self.P)))
        if kind == "matrix":
            return eval_mixed_moments(_resolve(self.leaf[1], bindings), self.P)
        if kind == "gram":
            A = np.asarray(_resolve(self.leaf[1], bindings))
            N = self.leaf[2]
            return eval_mixed_moments(A @ A.conj().T / N, self.P)
        if kind == "scaled":
            A = _resolve(self.leaf[1], bindings)
            n = self.leaf[2]
            return scaled_moments(A, self.P, 1.0 / np.sqrt(n))
        if kind == "pair":
            r = eval_mixed_moments(_resolve(self.leaf[1], bindings), self.P)
            s = eval_mixed_moments(_resolve(self.leaf[2], bindings), self.P)
            return pair_vector(r, s)
        raise ValueError(f"unknown leaf kind {kind}")

    def predict(self, bindings: dict | None = None) -> MomentVector:
        return self.forward(self.leaf_vector(bindings or {}))


def _resolve(ref, bindings: dict):
    if isinstance(ref, DetRef):
        if ref.name == "I":
            return np.eye(ref.rows)
        if ref.name in ("Z", "0"):
            return np.zeros((ref.rows, ref.cols))
        if ref.name not in bindings:
            raise KeyError(f"no matrix bound to name {ref.name!r}")
        M = np.asarray(bindings[ref.name])
        if M.shape != (ref.rows, ref.cols):
            raise DimensionError(
                f"binding {ref.name!r} has shape {M.shape}, declared {ref.rows}x{ref.cols}",
                dims=(M.shape, (ref.rows, ref.cols)),
            )
        return M
    return np.asarray(ref)


def compile_model(model: ModelExpr, P: int) -> Pipeline:
    """Assemble the pipeline of transfer maps realizing a model expression."""
    if isinstance(model, DetRef):
        _check(model.rows == model.cols, f"observable must be square, got {model.rows}x{model.cols}",
               dims=(model.rows, model.cols))
        return Pipeline((), ("matrix", model), P)
    if isinstance(model, GaussComplex):
        # Standalone Gaussian stands for the sandwich with identity factors.
        stage = wishart_product_transfer(model.n, model.N, P, "one")
        return Pipeline((stage,), ("matrix", DetRef("I", model.n, model.n)), P)
    if isinstance(model, GaussSelfAdjoint):
        # Standalone selfadjoint Gaussian: the additive model over a zero base.
        stage = selfadj_sum_transfer(model.n, P, model.sigma)
        return Pipeline((stage,), ("scaled", DetRef("Z", model.n, model.n), model.n), P)
    if isinstance(model, CorrProduct):
        r_dims = observable_dims(model.r)
        _check(r_dims == (model.n, model.n),
               f"sandwich core is {r_dims[0]}x{r_dims[1]}, Gaussian factor expects {model.n}x{model.n}",
               dims=(r_dims, (model.n, model.n)))
        if _is_identity_det(model.s):
            inner = compile_model(model.r, P)
            stage = wishart_product_transfer(model.n, model.N, P, "one")
            return Pipeline(inner.stages + (stage,), inner.leaf, P)
        s_dims = observable_dims(model.s)
        _check(s_dims == (model.N, model.N),
               f"second factor is {s_dims[0]}x{s_dims[1]}, expects {model.N}x{model.N}",
               dims=(s_dims, (model.N, model.N)))
        _check(isinstance(model.r, DetRef) and isinstance(model.s, DetRef),
               "two-sided sandwich supports deterministic factors only")
        stage = wishart_product_transfer(model.n, model.N, P, "two")
        return Pipeline((stage,), ("pair", model.r, model.s), P)
    if isinstance(model, GaussSum):
        g = model.gauss
        stage = gauss_sum_transfer(g.n, g.N, P, g.sigma)
        if isinstance(model.base, DetRef):
            _check((model.base.rows, model.base.cols) == (g.n, g.N),
                   f"base is {model.base.rows}x{model.base.cols}, noise is {g.n}x{g.N}",
                   dims=((model.base.rows, model.base.cols), (g.n, g.N)))
            return Pipeline((stage,), ("gram", model.base, g.N), P)
        inner = compile_model(model.base, P)
        dims = observable_dims(model.base)
        _check(dims == (g.n, g.n),
               f"random base observable is {dims[0]}x{dims[1]}, noise rows are {g.n}",
               dims=(dims, (g.n, g.n)))
        return Pipeline(inner.stages + (stage,), inner.leaf, P)
    if isinstance(model, SelfAdjProduct):
        dims = observable_dims(model.r)
        _check(dims == (model.n, model.n), f"factor is {dims[0]}x{dims[1]}, expected {model.n}x{model.n}",
               dims=(dims, (model.n, model.n)))
        inner = compile_model(model.r, P)
        stage = selfadj_product_transfer(model.n, P)
        return Pipeline(inner.stages + (stage,), inner.leaf, P)
    if isinstance(model, SelfAdjSum):
        g = model.gauss
        dims = observable_dims(model.r)
        _check(dims == (g.n, g.n), f"base is {dims[0]}x{dims[1]}, expected {g.n}x{g.n}",
               dims=(dims, (g.n, g.n)))
        stage = selfadj_sum_transfer(g.n, P, g.sigma)
        if isinstance(model.r, DetRef):
            return Pipeline((stage,), ("scaled", model.r, g.n), P)
        raise DimensionError("selfadjoint additive models support deterministic bases only")
    if isinstance(model, Chain):
        dims = observable_dims(model.base)
        stages = []
        for g in model.factors:
            _check(dims == (g.n, g.n),
                   f"chain factor expects {g.n}x{g.n}, upstream observable is {dims[0]}x{dims[1]}",
                   dims=(dims, (g.n, g.n)))
            stages.append(wishart_product_transfer(g.n, g.N, P, "one"))
        inner = compile_model(model.base, P)
        return Pipeline(inner.stages + tuple(stages), inner.leaf, P)
    raise TypeError(f"unsupported model expression: {model!r}")


# -- formula emission ----------------------------------------------------------

def _key_label(key: PartKey, latex: bool, letter: str = "M") -> str:
    if key == ():
        return "1"
    body = ",".join(str(p) for p in key)
    return f"{letter}_{{{body}}}" if latex else f"{letter}_{body}"


def _product_label(key: PartKey, latex: bool, letter: str = "D") -> str:
    """Input key rendered as a product with exponents, e.g. D_2 D_1^2."""
    if key == ():
        return ""
    parts: list[str] = []
    for p in sorted(set(key), reverse=True):
        mult = key.count(p)
        base = f"{letter}_{{{p}}}" if latex else f"{letter}_{p}"
        if mult > 1:
            base += f"^{{{mult}}}" if latex else f"^{mult}"
        parts.append(base)
    return "".join(parts) if latex else "*".join(parts)


def emit_formula(tm: TransferMap, fmt: str = "plain", style: str = "c") -> str:
    """Render a transfer map: matrices for product maps, formulas for sum maps."""
    latex = fmt == "latex"
    product_kinds = ("wishart_product", "selfadj_product", "identity")
    if any(tm.kind.startswith(k) for k in product_kinds) and "." not in tm.kind:
        return _emit_matrix(tm, latex, style)
    return _emit_sum(tm, latex, style)


def _emit_matrix(tm: TransferMap, latex: bool, style: str) -> str:
    in_letter = "R"
    lines: list[str] = []
    blocks = tm.weight_blocks()
    for w in sorted(blocks):
        if w == 0:
            continue
        out_keys, in_keys = blocks[w]
        cells = [
            [coeffring.render(tm.entry(ok, ik), style=style, fmt="latex" if latex else "plain")
             for ik in in_keys]
            for ok in out_keys
        ]
        if latex:
            rows = [" & ".join(row) for row in cells]
            out_vec = r" \\ ".join(_key_label(k, True) for k in out_keys)
            in_vec = r" \\ ".join(_key_label(k, True, in_letter) for k in in_keys)
            body = r" \\ ".join(rows)
            ncols = "c" * len(in_keys)
            lines.append(
                rf"\begin{{pmatrix}} {out_vec} \end{{pmatrix}} = "
                rf"\begin{{pmatrix}} {body} \end{{pmatrix}} "
                rf"\begin{{pmatrix}} {in_vec} \end{{pmatrix}}"
            )
        else:
            width = max((len(c) for row in cells for c in row), default=1)
            label_w = max(len(_key_label(k, False)) for k in out_keys)
            for i, ok in enumerate(out_keys):
                row = "  ".join(c.rjust(width) for c in cells[i])
                eq = "=" if i == (len(out_keys) - 1) // 2 else " "
                lines.append(f"[ {_key_label(ok, False).ljust(label_w)} ] {eq} [ {row} ]")
            lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _emit_sum(tm: TransferMap, latex: bool, style: str) -> str:
    lines: list[str] = []
    in_letter = "D"
    for ok in tm.out_basis:
        if ok == ():
            continue
        row = tm.row(ok)
        terms: list[str] = []
        for ik in tm.in_basis:
            poly = row.get(ik)
            if poly is None or poly.is_zero:
                continue
            coeff = coeffring.render(poly, style=style, fmt="latex" if latex else "plain")
            label = _product_label(ik, latex, in_letter)
            composite = " + " in coeff or " - " in coeff or coeff.startswith("-")
            if not label:
                terms.append(f"({coeff})" if composite else coeff)
                continue
            if coeff == "1":
                terms.append(label)
                continue
            if composite or "/" in coeff:
                coeff_txt = rf"\left({coeff}\right)" if latex else f"({coeff})"
            else:
                coeff_txt = coeff
            terms.append(coeff_txt + label if latex else f"{coeff_txt}*{label}")
        rhs = " + ".join(terms) if terms else "0"
        eq = "&=" if latex else "="
        lines.append(f"{_key_label(ok, latex)} {eq} {rhs}")
    return "\n".join(lines) + "\n"
