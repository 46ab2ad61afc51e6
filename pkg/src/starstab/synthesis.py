"""Synthesizing an exact *-homomorphism near an approximate one.

The correction walks the matrix-unit presentation of the domain: spectral
rounding of the image of each block's corner projection, polar partial
isometries for the off-corner units, and an orthogonalization sweep over
the almost-orthogonal range projections (decreasing trace order).  The
assembled unit system satisfies the matrix-unit relations to machine
precision, so its linear extension is exact.

Intertwiners between two exact embeddings come from the polar factor of
the standard unit-matching sum, with a complement-alignment term when the
embeddings are non-unital; the construction succeeds exactly when the
multiplicity vectors (including padding rank) agree.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .algebra import (AlgebraElement, AlgebraShape, from_blockdiag, identity,
                      matrix_unit)
from .defects import ApproxMap, estimate_defect
from .errors import (GapError, MultiplicityMismatch, PreconditionError,
                     SingularMapError)
from .factory import EmbeddingSpec
from .probes import ball_probes


@dataclass(frozen=True, eq=False)
class MatrixUnitSystem:
    """Per-block families f^b_{ij} of N x N matrices obeying the matrix-unit
    relations, with the achieved residuals attached."""

    shape: AlgebraShape
    dim: int
    units: tuple[tuple[tuple[np.ndarray, ...], ...], ...]   # [block][i][j]
    multiplicities: tuple[int, ...]

    def unit(self, b: int, i: int, j: int) -> np.ndarray:
        return self.units[b][i][j]

    def relation_residual(self) -> float:
        """Max violation of the ring, adjoint and sub-unit relations."""
        worst = 0.0
        flat = [(b, i, j, self.unit(b, i, j))
                for b, n in enumerate(self.shape.blocks)
                for i in range(n) for j in range(n)]
        for b, i, j, f in flat:
            worst = max(worst, la.op_norm(f.conj().T - self.unit(b, j, i)))
            for c, k, l, g in flat:
                prod = f @ g
                expect = self.unit(b, i, l) if (b == c and j == k) else None
                if expect is None:
                    worst = max(worst, la.op_norm(prod))
                else:
                    worst = max(worst, la.op_norm(prod - expect))
        total = sum(self.unit(b, i, i)
                    for b, n in enumerate(self.shape.blocks) for i in range(n))
        w = np.linalg.eigvalsh(la.herm(total))
        worst = max(worst, float(w[-1]) - 1.0, 0.0)
        return worst

    def as_map(self) -> ApproxMap:
        """Linear extension x -> sum x^b_{ij} f^b_{ij} (an exact homomorphism
        once the relations hold)."""
        basis = np.stack([self.unit(b, i, j)
                          for b, n in enumerate(self.shape.blocks)
                          for i in range(n) for j in range(n)])
        return ApproxMap.linear(self.shape, self.dim, basis,
                                {"kind": "matrix-unit-system",
                                 "multiplicities": self.multiplicities})

    def to_dict(self) -> dict:
        per_unit = {}
        for b, n in enumerate(self.shape.blocks):
            for i in range(n):
                for j in range(n):
                    f = self.unit(b, i, j)
                    per_unit[f"{b},{i},{j}"] = {
                        "matrix": [[float(z.real), float(z.imag)] for z in f.ravel()],
                        "adjoint_residual": float(
                            la.op_norm(f.conj().T - self.unit(b, j, i))),
                    }
        return {
            "shape": list(self.shape.blocks),
            "dim": self.dim,
            "multiplicities": list(self.multiplicities),
            "relation_residual": self.relation_residual(),
            "units": per_unit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _round_orthogonal(candidate: np.ndarray, accepted: np.ndarray | None,
                      rank: int, band=(0.25, 0.75)) -> np.ndarray:
    """Spectral-round a near-projection into the complement of the accepted
    ranges, preserving its rank."""
    if accepted is not None:
        comp = np.eye(candidate.shape[0]) - accepted
        candidate = comp @ candidate @ comp
    p, _ = la.spectral_round_projection(la.herm(candidate), band=band)
    got = int(round(float(np.real(np.trace(p)))))
    if got != rank:
        raise GapError(f"orthogonalization changed the rank ({rank} -> {got})")
    return p


def matrix_unit_correction(phi: ApproxMap, tol: float = 1e-9,
                           eps: float | None = None,
                           admissible: float = 1e-2,
                           assert_factor: float = 50.0,
                           probes=None,
                           samples: int = 48):
    """Correct an approximate homomorphism to an exact one nearby.

    Returns (MatrixUnitSystem, psi, info).  Aborts with GapError when a
    rounded element has an eigenvalue inside [1/2 - 5 eps, 1/2 + 5 eps].
    The measured distance ||psi - phi|| over probes is asserted to stay
    below ``assert_factor * eps`` (plus a small absolute floor).
    """
    shape = phi.domain
    n_amb = phi.dim
    if eps is None:
        eps = estimate_defect(phi, samples).epsilon
    if not eps < admissible:
        raise PreconditionError(
            f"correction needs estimated defect < {admissible:.3g}, got {eps:.3g}")
    eps_eff = max(eps, 2e-3)
    band = (0.5 - 5.0 * eps_eff - 1e-12, 0.5 + 5.0 * eps_eff + 1e-12)

    corners = []
    for b in range(len(shape.blocks)):
        q_raw, _ = la.spectral_round_projection(
            la.herm(phi(matrix_unit(shape, b, 0, 0))), band=band)
        corners.append(q_raw)
    mults = [int(round(float(np.real(np.trace(q))))) for q in corners]
    order = sorted(range(len(shape.blocks)),
                   key=lambda b: (-mults[b] * shape.blocks[b], b))

    accepted = None
    isoms: dict[int, list[np.ndarray]] = {}
    for b in order:
        n, m = shape.blocks[b], mults[b]
        if m == 0:
            isoms[b] = [np.zeros((n_amb, 0), dtype=complex) for _ in range(n)]
            continue
        q = _round_orthogonal(corners[b], accepted, m, band)
        q_basis = la.orthonormal_range(q, m)
        accepted = q if accepted is None else accepted + q
        cols = [q_basis]
        for i in range(1, n):
            x = phi(matrix_unit(shape, b, i, 0)) @ q
            w = la.isometry_factor(x @ q_basis)
            r = _round_orthogonal(w @ w.conj().T, accepted, m, band)
            w = la.isometry_factor(r @ w)
            accepted = accepted + r
            cols.append(w)
        isoms[b] = cols

    units = []
    for b, n in enumerate(shape.blocks):
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                f = isoms[b][i] @ isoms[b][j].conj().T
                f = np.ascontiguousarray(f)
                f.setflags(write=False)
                row.append(f)
            rows.append(tuple(row))
        units.append(tuple(rows))
    system = MatrixUnitSystem(shape, n_amb, tuple(units), tuple(mults))
    resid = system.relation_residual()
    if resid > tol:
        raise SingularMapError(
            f"matrix-unit relations only hold to {resid:.3g} (tolerance {tol:.3g})")
    psi = system.as_map()
    if probes is None:
        probes = ball_probes(shape, 48, seed=23)
    dist = max(la.op_norm(psi(x) - phi(x)) for x in probes)
    bound = assert_factor * eps + 1e-9
    info = {"distance": dist, "distance_bound": bound, "distance_ok": dist <= bound,
            "relation_residual": resid, "epsilon": eps,
            "multiplicities": tuple(mults)}
    if not info["distance_ok"]:
        raise SingularMapError(
            f"corrected map moved {dist:.3g}, beyond {bound:.3g}")
    return system, psi, info


def _multiplicity_profile(psi: ApproxMap, tol: float = 1e-6):
    """(multiplicity per block, padding rank) of an exact embedding."""
    shape = psi.domain
    mults = []
    for b in range(len(shape.blocks)):
        p = psi(matrix_unit(shape, b, 0, 0))
        if la.op_norm(p @ p - p) > tol:
            raise PreconditionError("map is not an exact homomorphism "
                                    "(corner image is not a projection)")
        mults.append(int(round(float(np.real(np.trace(p))))))
    rank = int(round(float(np.real(np.trace(psi(identity(shape)))))))
    return tuple(mults), psi.dim - rank


def intertwiner(psi: ApproxMap, psi2: ApproxMap, tol: float = 1e-10) -> np.ndarray:
    """Unitary V with Ad(V) psi = psi2, for two exact embeddings of the same
    shape with matching multiplicity and padding data."""
    if psi.domain != psi2.domain or psi.dim != psi2.dim:
        raise PreconditionError("maps must share domain shape and codomain size")
    shape = psi.domain
    n = psi.dim
    m1, d1 = _multiplicity_profile(psi)
    m2, d2 = _multiplicity_profile(psi2)
    if m1 != m2 or d1 != d2:
        raise MultiplicityMismatch((m1, d1), (m2, d2))
    x = np.zeros((n, n), dtype=complex)
    for b, nb in enumerate(shape.blocks):
        for i in range(nb):
            x = x + psi2(matrix_unit(shape, b, i, 0)) @ psi(matrix_unit(shape, b, 0, i))
    if d1 > 0:
        p1 = psi(identity(shape))
        p2 = psi2(identity(shape))
        z = (np.eye(n) - p2) @ (np.eye(n) - p1)
        u, s, vh = np.linalg.svd(z)
        if s[d1 - 1] < 1e-8:
            raise SingularMapError("padding complements are too far apart to align")
        x = x + u[:, :d1] @ vh[:d1, :]
    s = np.linalg.svd(x, compute_uv=False)
    if s[-1] < 1e-8:
        raise SingularMapError("unit-matching sum is singular (maps too far apart)")
    v = la.polar_unitary(x)
    worst = 0.0
    for b, nb in enumerate(shape.blocks):
        for i in range(nb):
            for j in range(nb):
                e = matrix_unit(shape, b, i, j)
                worst = max(worst, la.op_norm(v @ psi(e) @ v.conj().T - psi2(e)))
    if worst > tol:
        raise SingularMapError(f"intertwiner residual {worst:.3g} exceeds {tol:.3g}")
    return v


class TraceExpectation:
    """Trace-orthogonal conditional expectation onto the image of an
    embedding: unital, positive, contractive, idempotent."""

    def __init__(self, spec: EmbeddingSpec):
        self.spec = spec
        self.dim = spec.dim
        basis = []
        weights = []
        shape = spec.shape
        for b, nb in enumerate(shape.blocks):
            m = spec.multiplicities[b]
            if m == 0:
                continue
            for i in range(nb):
                for j in range(nb):
                    basis.append(spec.embed(matrix_unit(shape, b, i, j)))
                    weights.append(1.0 / m)
        self._basis = basis
        self._weights = weights

    def project(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for g, w in zip(self._basis, self._weights):
            out = out + w * np.vdot(g.ravel(), y.ravel()) * g
        return out

    def distance(self, y: np.ndarray, radius: float | None = None) -> float:
        """Operator-norm distance from y to the (radius-clipped) image."""
        p = self.project(y)
        if radius is not None:
            nrm = la.op_norm(p)
            if nrm > radius > 0.0:
                p = p * (radius / nrm)
            elif radius == 0.0:
                p = np.zeros_like(p)
        return la.op_norm(y - p)

    def pull_back(self, y: np.ndarray) -> AlgebraElement:
        """Coordinates of E(y) in the abstract copy of the subalgebra."""
        w = self.spec.conjugator
        z = y if w is None else w.conj().T @ y @ w
        mats = []
        off = 0
        for nb, m in zip(self.spec.shape.blocks, self.spec.multiplicities):
            a = np.zeros((nb, nb), dtype=complex)
            if m > 0:
                sub = z[off:off + nb * m, off:off + nb * m]
                for s in range(m):
                    a += sub[s::m, s::m]
                a /= m
                off += nb * m
            mats.append(a)
        return AlgebraElement(self.spec.shape, mats)


def near_inclusion_fix(psi1: ApproxMap, target: EmbeddingSpec, tol: float = 1e-9,
                       probes=None, correction_kwargs: dict | None = None):
    """Move a map whose range nearly lies in a represented subalgebra into it.

    Projects through the trace expectation, corrects to an exact
    homomorphism inside the subalgebra, and aligns with a unitary close
    to 1.  Returns (V, psi, info) with the measured near-inclusion distance
    and the sqrt-budget checks.
    """
    if target.dim != psi1.dim:
        raise PreconditionError("target subalgebra lives in a different matrix size")
    exp = TraceExpectation(target)
    if probes is None:
        probes = ball_probes(psi1.domain, 48, seed=29)
    eps6 = max(exp.distance(psi1(x), radius=x.norm()) for x in probes)
    kw = dict(correction_kwargs or {})

    # correct inside the subalgebra: work in block-diagonal coordinates
    small_shape = target.shape
    small_dim = small_shape.blockdiag_dim

    def small_fn(x: AlgebraElement) -> np.ndarray:
        return exp.pull_back(psi1(x)).as_blockdiag()

    small = ApproxMap(psi1.domain, small_dim, small_fn, {"kind": "expectation-compressed"})
    _, psi_small, corr_info = matrix_unit_correction(small, tol=tol, **kw)

    def into_target(x: AlgebraElement) -> np.ndarray:
        return target.embed(from_blockdiag(small_shape, psi_small(x)))

    psi_b = ApproxMap(psi1.domain, psi1.dim, into_target,
                      {"kind": "near-inclusion-corrected", "target": target.to_dict()})

    # exactify psi1 if needed, then intertwine
    _, psi1_exact, corr1_info = matrix_unit_correction(psi1, tol=tol, **kw)
    v = intertwiner(psi1_exact, psi_b, tol=max(tol, 1e-10))
    v_dev = la.op_norm(v - np.eye(psi1.dim))
    movement = max(la.op_norm(v @ psi1(x) @ v.conj().T - psi1(x)) for x in probes)
    root = np.sqrt(max(eps6, 1e-12))
    info = {
        "eps6": eps6,
        "v_deviation": v_dev,
        "v_bound": 120.0 * root,
        "v_ok": v_dev <= 120.0 * root,
        "movement": movement,
        "movement_bound": 240.0 * root,
        "movement_ok": movement <= 240.0 * root,
        "correction": corr_info,
        "input_correction": corr1_info,
    }
    return v, psi_b, info
