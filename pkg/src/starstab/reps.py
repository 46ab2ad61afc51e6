"""From near-multiplicative maps on the unitary group to honest unitary
representations, and from those to per-block *-homomorphism data.

Unitarization conjugates by the square root of an averaged Gram matrix and
polar-snaps the result, so downstream spectral calculus always sees exactly
unitary input.  Irreducible blocks are found through the commutant: the
eigenprojections of a generic Hermitian element of the (numerical)
commutant of sampled generators are minimal invariant projections, and a
block is certified irreducible when its restricted commutant is
one-dimensional.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .algebra import AlgebraElement, _derive_seed, identity, involution_exp
from .averaging import GroupMap, HaarSampler, _batch_means, _spread
from .errors import PreconditionError, SingularMapError, SnapError
from .probes import random_unitaries


@dataclass(frozen=True)
class Unitarizer:
    """Positive invertible T for which T tau(.) T^{-1} is unitary."""

    t: np.ndarray
    deviation: float          # ||T - 1||
    mc: float

    def __post_init__(self):
        if abs(la.op_norm(self.t - np.eye(self.t.shape[0])) - self.deviation) > 1e-12:
            raise PreconditionError("recorded deviation does not match T")


def unitarize(tau: GroupMap, width: int, probe_us=None, batches: int = 8,
              eps2: float | None = None, snap_tol: float = 1e-3,
              seed: int | None = None):
    """Average tau(u)* tau(u) over Haar samples, conjugate by the square root
    and snap to unitaries.

    Returns (Unitarizer, pi, info).  Requires the measured Gram deviation
    sup ||tau(u)* tau(u) - 1|| to be < 1/2 over the probes.
    """
    if probe_us is None:
        probe_us = random_unitaries(tau.domain, 8, _derive_seed(tau.seed, "unit-probes"))
    eps3 = max(la.op_norm(tau(u).conj().T @ tau(u) - np.eye(tau.dim)) for u in probe_us)
    if not eps3 < 0.5:
        raise PreconditionError(
            f"Gram deviation {eps3:.3g} >= 1/2: too far from unitary to unitarize")
    sampler = HaarSampler(tau.domain, _derive_seed(tau.seed, "unitarize",
                                                   seed if seed is not None else 0))
    grams = np.stack([(v := tau(sampler.unitary())).conj().T @ v for _ in range(width)])
    mean = la.herm(grams.mean(axis=0))
    mc = _spread(_batch_means(grams, batches))
    w = np.linalg.eigvalsh(mean)
    if w[0] <= 0.0:
        raise SingularMapError("averaged Gram matrix is not positive definite")
    t = la.herm_fun(mean, np.sqrt)
    t_inv = la.herm_fun(mean, lambda x: 1.0 / np.sqrt(x))
    deviation = la.op_norm(t - np.eye(tau.dim))

    def fn(u: AlgebraElement) -> np.ndarray:
        snapped, _ = la.snap_unitary(t @ tau(u) @ t_inv, snap_tol)
        return snapped

    pi = GroupMap(tau.domain, tau.dim, fn, level=tau.level, seed=tau.seed,
                  meta={**tau.meta, "unitarized": True})
    if eps2 is None:
        eps2 = max(max(la.op_norm(tau(u)) for u in probe_us) - 1.0, 0.0)
    move = max(la.op_norm(pi(u) - tau(u)) for u in probe_us)
    max_snap = max(la.op_norm(t @ tau(u) @ t_inv - pi(u)) for u in probe_us)
    dev_bound = eps3 + mc + 1e-12
    move_bound = 2.0 * (1.0 + eps2) * eps3 / (1.0 - eps3) + mc + snap_tol + 1e-12
    info = {
        "gram_deviation": eps3,
        "t_deviation": deviation,
        "t_deviation_bound": dev_bound,
        "t_deviation_ok": deviation <= dev_bound,
        "movement": move,
        "movement_bound": move_bound,
        "movement_ok": move <= move_bound,
        "max_snap": max_snap,
        "mc": mc,
    }
    return Unitarizer(t, deviation, mc), pi, info


@dataclass(frozen=True)
class BlockDecomposition:
    """Orthogonal projections onto irreducible invariant subspaces."""

    dim: int
    projections: tuple[np.ndarray, ...]
    block_dims: tuple[int, ...]
    residual: float           # max commutation residual over the generator probes

    def __post_init__(self):
        for p in self.projections:
            p.setflags(write=False)

    def isometries(self):
        """Orthonormal column bases V_k with p_k = V_k V_k*."""
        return [la.orthonormal_range(p, d)
                for p, d in zip(self.projections, self.block_dims)]

    def check_partition(self, tol: float = 1e-10) -> bool:
        total = sum(self.projections)
        if la.op_norm(total - np.eye(self.dim)) > tol:
            return False
        for i, p in enumerate(self.projections):
            if la.op_norm(p @ p - p) > tol:
                return False
            for q in self.projections[i + 1:]:
                if la.op_norm(p @ q) > tol:
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "block_dims": list(self.block_dims),
            "residual": self.residual,
            "projections": [[[float(z.real), float(z.imag)] for z in p.ravel()]
                            for p in self.projections],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _commutant_basis(mats, hint: float):
    """Null space of X -> [X, m_i] over all generators, via the stacked
    commutation operator on vec(X) (row-major).

    ``hint`` is the expected commutation-residual scale; eigenvalues of the
    squared operator below (3 hint)^2 per generator count as null.  A clean
    spectral separation at the cut is required.
    """
    n = mats[0].shape[0]
    eye = np.eye(n)
    acc = np.zeros((n * n, n * n), dtype=complex)
    for m in mats:
        k = np.kron(eye, m.T) - np.kron(m, eye)
        acc += k.conj().T @ k
    w, v = np.linalg.eigh(la.herm(acc))
    # the floor covers eigh's absolute accuracy near zero (~eps * ||C||)
    cut = len(mats) * max(3.0 * hint, 1e-6) ** 2
    dim = int(np.sum(w < cut))
    if dim < 1:
        raise SingularMapError(
            f"commutant solve found no null space below the cut {cut:.3g} "
            f"(smallest eigenvalue {w[0]:.3g})")
    first_out = w[dim] if dim < len(w) else np.inf
    if first_out < 20.0 * max(w[dim - 1], cut / 400.0):
        raise SingularMapError(
            f"commutant rank is ambiguous near the cut ({w[max(dim-2,0):dim+2]})")
    return [v[:, i].reshape(n, n) for i in range(dim)]


def _generic_commutant_element(basis, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x9E]))
    x = sum(complex(c) * z for c, z in
            zip(rng.standard_normal(len(basis)) + 1j * rng.standard_normal(len(basis)), basis))
    x = la.herm(x)
    nrm = la.op_norm(x)
    if nrm < 1e-14:
        raise SingularMapError("degenerate commutant draw")
    return x / nrm


def _cluster_eigenvalues(w: np.ndarray, gap: float):
    groups = [[0]]
    for i in range(1, len(w)):
        if w[i] - w[i - 1] > gap:
            groups.append([])
        groups[-1].append(i)
    return groups


def _split_once(mats, hint: float, seed: int):
    """One commutant-driven split of the current space; returns isometries."""
    basis = _commutant_basis(mats, hint)
    if len(basis) == 1:
        return None     # irreducible here
    resid_scale = None
    for attempt in range(2):
        x = _generic_commutant_element(basis, _derive_seed(seed, "draw", attempt))
        resid = max(la.op_norm(x @ m - m @ x) for m in mats)
        gap = max(1e-6, min(0.05, 30.0 * max(resid, hint)))
        w, v = np.linalg.eigh(x)
        groups = _cluster_eigenvalues(w, gap)
        if len(groups) > 1:
            return [np.ascontiguousarray(v[:, g]) for g in groups]
        resid_scale = resid
    raise SingularMapError(
        f"eigenvalue clustering degenerate twice (residual {resid_scale:.3g})")


def _decompose_mats(mats, hint: float, seed: int, depth: int, ambient: int):
    n = mats[0].shape[0]
    if depth > ambient:
        raise SingularMapError("irreducibility recursion exceeded the ambient dimension")
    split = _split_once(mats, hint, seed)
    if split is None:
        return [np.eye(n, dtype=complex)]
    out = []
    for i, v in enumerate(split):
        sub = [v.conj().T @ m @ v for m in mats]
        for w in _decompose_mats(sub, hint, _derive_seed(seed, "rec", i, depth),
                                 depth + 1, ambient):
            out.append(np.ascontiguousarray(v @ w))
    return out


def decompose(pi: GroupMap, generator_count: int = 4, tol: float = 1e-8,
              seed: int | None = None, defect_hint: float = 0.0) -> BlockDecomposition:
    """Split a (near-)unitary representation into irreducible invariant blocks.

    ``tol`` bounds the commutation residual of the returned projections;
    ``defect_hint`` tells the commutant solve how multiplicative the input
    really is (0 = measure it).  Certifies each block by checking that its
    restricted commutant is one-dimensional; aborts if the rank of the
    commutant solve is ambiguous.
    """
    if generator_count < 2:
        raise PreconditionError("need at least two generators")
    seed = _derive_seed(pi.seed, "decompose") if seed is None else seed
    gens = random_unitaries(pi.domain, generator_count, _derive_seed(seed, "gens"))
    mats = [pi(u) for u in gens]
    unit_dev = max(la.op_norm(m.conj().T @ m - np.eye(pi.dim)) for m in mats)
    if unit_dev > 1e-8:
        raise PreconditionError(f"map is {unit_dev:.3g} from unitary on probes")
    hint = defect_hint
    if hint <= 0.0:
        hint = max(la.op_norm(pi(u * v) - pi(u) @ pi(v))
                   for u, v in zip(gens[:-1], gens[1:]))
        hint = max(hint, 1e-11)
    isoms = _decompose_mats(mats, hint, seed, 0, pi.dim)
    for v in isoms:   # certify irreducibility of every leaf
        sub = [v.conj().T @ m @ v for m in mats]
        if len(_commutant_basis(sub, hint)) != 1:
            raise SingularMapError("a block failed its irreducibility certificate")
    tiebreak = np.diag(np.arange(pi.dim, dtype=float))
    keyed = []
    for v in isoms:
        p = la.herm(v @ v.conj().T)
        d = v.shape[1]
        keyed.append(((d, round(float(np.real(np.trace(p @ tiebreak))), 6)), p, d))
    keyed.sort(key=lambda t: t[0])
    projections = tuple(p for _, p, _ in keyed)
    dims = tuple(d for _, _, d in keyed)
    resid = max(la.op_norm(p @ m - m @ p) for p in projections for m in mats)
    if resid > tol:
        raise SingularMapError(f"block commutation residual {resid:.3g} exceeds {tol:.3g}")
    return BlockDecomposition(pi.dim, projections, dims, resid)


def compress(pi: GroupMap, isometry: np.ndarray, snap_tol: float = 1e-6) -> GroupMap:
    """Restrict a unitary representation to an invariant subspace, re-snapping
    so the block values are exactly unitary."""
    v = np.ascontiguousarray(isometry)

    def fn(u: AlgebraElement) -> np.ndarray:
        snapped, _ = la.snap_unitary(v.conj().T @ pi(u) @ v, snap_tol)
        return snapped

    return GroupMap(pi.domain, v.shape[1], fn, level=pi.level,
                    seed=_derive_seed(pi.seed, "block"), meta=dict(pi.meta))


def stone_generator(pi_block: GroupMap, a: AlgebraElement, r0: float = 0.5,
                    verify_at=(np.pi / 7.0, 1.0 / 3.0, 1.0),
                    verify_tol: float = 1e-6, snap_tol: float = 1e-3,
                    branch_guard: float = 1e-6) -> np.ndarray:
    """Image of a self-adjoint unitary under the one-parameter-group
    logarithm of the representation.

    Takes the principal logarithm of pi(exp(i r0 a)) at r0 = 1/2 (safely off
    the branch cut for spectrum in {-1, +1}), rescales, and snaps via the
    Hermitian sign function.  Verifies pi(exp(i r a)) = exp(i r rho(a)) at a
    few check angles.
    """
    if not a.is_hermitian(1e-10):
        raise PreconditionError("generator must be self-adjoint")
    if (a * a - identity(a.shape)).norm() > 1e-10:
        raise PreconditionError("generator must be a self-adjoint unitary (a^2 = 1)")
    u0 = pi_block(involution_exp(a, r0))
    h = la.principal_log_unitary(u0, branch_guard) / r0
    rho, _ = la.herm_sign_snap(h, snap_tol)
    for r in verify_at:
        lhs = pi_block(involution_exp(a, r))
        rhs = np.cos(r) * np.eye(pi_block.dim) + 1j * np.sin(r) * rho
        if la.op_norm(lhs - rhs) > verify_tol:
            raise SnapError(
                f"one-parameter group check failed at r = {r:.4g} "
                f"(residual {la.op_norm(lhs - rhs):.3g})",
                residual=la.op_norm(lhs - rhs))
    return rho


def lift_projection(pi_block: GroupMap, p: AlgebraElement, **kwargs) -> np.ndarray:
    """Lift a projection through (1 - rho(1 - 2p)) / 2."""
    if (p * p - p).norm() > 1e-10 or not p.is_hermitian(1e-10):
        raise PreconditionError("input must be a projection")
    u = identity(p.shape) - 2.0 * p
    rho = stone_generator(pi_block, u, **kwargs)
    return la.herm(0.5 * (np.eye(pi_block.dim) - rho))
