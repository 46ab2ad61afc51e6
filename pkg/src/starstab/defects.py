"""Measuring how far a map between algebras is from a *-homomorphism.

The five defect functionals (additivity, scalar homogeneity,
multiplicativity, adjoints, norm excess) are estimated as suprema over a
probe set, so every reported figure is a lower bound for the true defect.
Deterministic probes are always included so that exact homomorphisms test
exactly, independent of sampling.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _linalg as la
from .algebra import AlgebraElement, AlgebraShape, HaarSampler, identity
from .errors import EvaluationError, PreconditionError
from .probes import deterministic_pairs, sphere_probes


@dataclass(eq=False)
class ApproxMap:
    """An evaluable, deterministic map from an algebra into N x N matrices.

    The evaluator must be total on the ball of radius 2 and bit-reproducible;
    values are cached by the canonical bytes of the input.  Linear maps may
    carry a precomputed basis tensor (one N x N matrix per entry coordinate)
    which makes evaluation a single tensor contraction.
    """

    domain: AlgebraShape
    dim: int
    fn: Callable[[AlgebraElement], np.ndarray] | None
    meta: dict = field(default_factory=dict)
    basis: np.ndarray | None = None

    _CACHE_CAP = 8192

    def __post_init__(self):
        self._cache: dict[bytes, np.ndarray] = {}
        if self.fn is None and self.basis is None:
            raise PreconditionError("map needs an evaluator or a linear basis")
        self._flat_basis = None
        if self.basis is not None:
            expect = (self.domain.linear_dim, self.dim, self.dim)
            if self.basis.shape != expect:
                raise PreconditionError(
                    f"basis tensor has shape {self.basis.shape}, expected {expect}")
            self._flat_basis = np.ascontiguousarray(self.basis.reshape(expect[0], -1))

    def __call__(self, x: AlgebraElement) -> np.ndarray:
        key = x.key()
        out = self._cache.get(key)
        if out is None:
            if self._flat_basis is not None:
                coeffs = np.concatenate([a.ravel() for a in x.blocks])
                out = (coeffs @ self._flat_basis).reshape(self.dim, self.dim)
            else:
                out = np.ascontiguousarray(self.fn(x), dtype=complex)
                if out.shape != (self.dim, self.dim):
                    raise PreconditionError(
                        f"evaluator returned shape {out.shape}, "
                        f"expected ({self.dim}, {self.dim})")
            out.setflags(write=False)
            if len(self._cache) >= self._CACHE_CAP:
                self._cache.clear()
            self._cache[key] = out
        return out

    @classmethod
    def linear(cls, domain: AlgebraShape, dim: int, basis: np.ndarray,
               meta: dict | None = None) -> "ApproxMap":
        return cls(domain, dim, None, meta or {},
                   np.ascontiguousarray(basis, dtype=complex))

    def compose_input(self, pre: Callable[[AlgebraElement], AlgebraElement],
                      domain: AlgebraShape | None = None, **meta) -> "ApproxMap":
        return ApproxMap(domain or self.domain, self.dim,
                         lambda x: self(pre(x)), {**self.meta, **meta})


@dataclass(frozen=True)
class DefectReport:
    """Suprema of the five defect expressions over the sampled probe set."""

    add_defect: float
    scalar_defect: float
    mult_defect: float
    adj_defect: float
    norm_excess: float
    sample_count: int

    @property
    def epsilon(self) -> float:
        return max(self.add_defect, self.scalar_defect, self.mult_defect,
                   self.adj_defect, self.norm_excess)

    def to_dict(self) -> dict:
        return {
            "add_defect": self.add_defect,
            "scalar_defect": self.scalar_defect,
            "mult_defect": self.mult_defect,
            "adj_defect": self.adj_defect,
            "norm_excess": self.norm_excess,
            "epsilon": self.epsilon,
            "sample_count": self.sample_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DefectReport":
        d = json.loads(text)
        return cls(d["add_defect"], d["scalar_defect"], d["mult_defect"],
                   d["adj_defect"], d["norm_excess"], d["sample_count"])

    def merge(self, other: "DefectReport") -> "DefectReport":
        """Associative max-merge of two reports (parallel probe evaluation)."""
        return DefectReport(
            max(self.add_defect, other.add_defect),
            max(self.scalar_defect, other.scalar_defect),
            max(self.mult_defect, other.mult_defect),
            max(self.adj_defect, other.adj_defect),
            max(self.norm_excess, other.norm_excess),
            self.sample_count + other.sample_count)


def _defects_on_pairs(m: ApproxMap, triples) -> DefectReport:
    add = scal = mult = adj = excess = 0.0
    for x, y, lam in triples:
        try:
            fx, fy = m(x), m(y)
            add = max(add, la.op_norm(m(x + y) - fx - fy))
            scal = max(scal, la.op_norm(m(lam * x) - lam * fx))
            mult = max(mult, la.op_norm(m(x * y) - fx @ fy))
            adj = max(adj, la.op_norm(m(x.adjoint()) - fx.conj().T))
            excess = max(excess, la.op_norm(fx) - 1.0, la.op_norm(fy) - 1.0)
        except Exception as exc:
            raise EvaluationError(f"evaluator failed on a probe pair: {exc}",
                                  offending=(x, y, lam)) from exc
    return DefectReport(add, scal, mult, adj, max(excess, 0.0), len(triples))


def estimate_defect(m: ApproxMap, samples: int,
                    sampler: HaarSampler | None = None,
                    det_cap: int = 12, det_pair_cap: int = 256) -> DefectReport:
    """Evaluate the five defects on random unit-ball pairs plus the
    deterministic probe grid; per-probe seeds derive from the probe index."""
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    if sampler is None:
        sampler = HaarSampler(m.domain, seed=0)
    triples = []
    for i in range(samples):
        s = sampler.fork(("defect", i))
        triples.append((s.contraction(), s.contraction(), s.disc_scalar()))
    triples += deterministic_pairs(m.domain, cap_elems=det_cap, cap_pairs=det_pair_cap)
    return _defects_on_pairs(m, triples)


def map_norm(m: ApproxMap, probes) -> float:
    """sup of ||phi(x)|| over the given unit-ball probes."""
    return max(la.op_norm(m(x)) for x in probes)


def normalize(m: ApproxMap, samples: int = 64,
              sampler: HaarSampler | None = None,
              band: tuple[float, float] = (0.25, 0.75)) -> ApproxMap:
    """Rescale a map to be contractive and snap its value at 1 to a projection.

    Refuses when the value at 1 has an eigenvalue inside ``band`` (no
    spectral gap) or when the estimated defect is not < 0.1.  The returned
    map carries both before and after defect reports in its metadata.
    """
    before = estimate_defect(m, samples, sampler)
    if not before.epsilon < 0.1:
        raise PreconditionError(
            f"normalize needs estimated defect < 0.1, measured {before.epsilon:.3g}")
    one = identity(m.domain)
    probes = sphere_probes(m.domain, max(samples, 16), seed=7)
    scale = max(1.0, map_norm(m, probes))
    p, moved = la.spectral_round_projection(la.herm(m(one)), band=band)
    one_key = one.key()

    def fn(x: AlgebraElement) -> np.ndarray:
        if x.key() == one_key:
            return p
        return m(x) / scale

    out = ApproxMap(m.domain, m.dim, fn,
                    {**m.meta, "normalized": True, "scale": scale,
                     "unit_rounding_moved": moved})
    after = estimate_defect(out, samples, sampler)
    out.meta["defect_before"] = before.to_dict()
    out.meta["defect_after"] = after.to_dict()
    return out


def is_eps_nonzero(m: ApproxMap, eps: float, probes):
    """True iff some norm-one probe keeps ||phi(a)|| >= 1 - eps; returns the witness."""
    for a in probes:
        if abs(a.norm() - 1.0) > 1e-9:
            continue
        if la.op_norm(m(a)) >= 1.0 - eps:
            return True, a
    return False, None


def s_iterate(x: AlgebraElement, n: int) -> AlgebraElement:
    """n-fold iterate of s(a) = a* a; positive for n >= 1."""
    if n < 0:
        raise PreconditionError("n must be >= 0")
    for _ in range(n):
        x = x.adjoint() * x
    return x


@dataclass(frozen=True)
class InductionWindow:
    """Integer window [k_min, k_max] with a verification row per k."""

    eps: float
    k_min: int
    k_max: int
    rows: tuple  # (k, lhs, rhs)

    @property
    def window(self) -> tuple[int, int]:
        return (self.k_min, self.k_max)

    def holds(self) -> bool:
        return all(lhs <= rhs + 1e-12 for _, lhs, rhs in self.rows)


def induction_window(eps: float) -> InductionWindow:
    """Window of integers k where (1 - k sqrt(eps))^2 + 2 eps <= 1 - (k+1) sqrt(eps),
    verified numerically for every k in it."""
    if not 0.0 < eps < 1.0 / 100.0:
        raise PreconditionError("induction window requires 0 < eps < 1/100")
    rt = math.sqrt(eps)
    # largest k with (k+2)^2 eps <= 1, robust to rounding of 1/sqrt(eps)
    k_max = int(math.floor(1.0 / rt)) + 2
    while (k_max + 2) ** 2 * eps > 1.0 + 8e-16:
        k_max -= 1
    rows = []
    for k in range(2, k_max + 1):
        lhs = (1.0 - k * rt) ** 2 + 2.0 * eps
        rhs = 1.0 - (k + 1) * rt
        rows.append((k, lhs, rhs))
    win = InductionWindow(eps, 2, k_max, tuple(rows))
    if not win.holds():
        raise PreconditionError("descent inequality failed inside its own window")
    return win


@dataclass(frozen=True)
class IsometryReport:
    verdict: str            # "isometric" | "not-nonzero" | "violation"
    threshold: float
    probes_checked: int
    witness_norm: float | None = None
    steps: tuple = ()       # (label, value) pairs replayed along the descent

    def is_isometric(self) -> bool:
        return self.verdict == "isometric"


def isometry_diagnostic(m: ApproxMap, eps: float, trials: int,
                        sampler: HaarSampler | None = None) -> IsometryReport:
    """Search norm-one probes for a violation of 2 sqrt(eps)-isometry on a
    single-block domain; replay the squaring descent when one is found.

    The descent iterates s(a) = a* a (which preserves norm one and forces
    positivity), extracts a rank-one spectral projection, and records the
    rank-additivity contradiction chain with measured norms at each step.
    """
    if len(m.domain.blocks) != 1:
        raise PreconditionError("diagnostic applies to a single matrix block")
    if not eps < 1.0 / 100.0:
        raise PreconditionError("requires eps < 1/100")
    if sampler is None:
        sampler = HaarSampler(m.domain, seed=11)
    probes = sphere_probes(m.domain, max(trials // 4, 8), seed=13)
    if map_norm(m, probes) > 1.0 + 1e-9:
        raise PreconditionError("map must be normalized (||phi|| <= 1) first")
    thr = 2.0 * math.sqrt(eps)
    ok, _ = is_eps_nonzero(m, thr, probes)
    if not ok:
        return IsometryReport("not-nonzero", thr, len(probes))

    ell = m.domain.blocks[0]
    checked = 0
    bad = None
    for i in range(trials):
        x = sampler.fork(("iso", i)).sphere()
        checked += 1
        if la.op_norm(m(x)) < 1.0 - thr:
            bad = x
            break
    if bad is None:
        return IsometryReport("isometric", thr, checked)

    steps = [("violating probe image norm", la.op_norm(m(bad)))]
    y = bad
    cap = induction_window(eps).k_max + 2
    n = 0
    while la.op_norm(m(y)) > thr and n < cap:
        y = s_iterate(y, 1)
        nrm = y.norm()
        if nrm > 0.0:        # squaring preserves unit norm; undo float drift
            y = y / nrm
        n += 1
        steps.append((f"descent step {n} image norm", la.op_norm(m(y))))
    # rank-one projection onto the top eigenspace of the positive iterate
    w, v = np.linalg.eigh(la.herm(y.blocks[0]))
    order = np.argsort(w)[::-1]
    vecs = v[:, order]
    p1 = AlgebraElement(m.domain, [np.outer(vecs[:, 0], vecs[:, 0].conj())])
    steps.append(("rank-1 projection image norm", la.op_norm(m(p1))))
    # ladder of nested projections, replaying the rank-additivity argument
    norms = []
    for j in range(1, ell + 1):
        cols = vecs[:, :j]
        pj = AlgebraElement(m.domain, [cols @ cols.conj().T])
        norms.append(la.op_norm(m(pj)))
        steps.append((f"rank-{j} projection image norm", norms[-1]))
    j_big = next((j for j, t in enumerate(norms, start=1) if t >= 0.5), None)
    if j_big is not None and j_big > 1:
        q1 = AlgebraElement(m.domain, [vecs[:, :j_big - 1] @ vecs[:, :j_big - 1].conj().T])
        q2 = AlgebraElement(m.domain, [np.outer(vecs[:, j_big - 1], vecs[:, j_big - 1].conj())])
        bound = la.op_norm(m(q1)) + la.op_norm(m(q2)) + eps
        steps.append((f"split bound at rank {j_big} (should contradict >= 1/2)", bound))
    return IsometryReport("violation", thr, checked,
                          witness_norm=la.op_norm(m(bad)), steps=tuple(steps))
