"""Ground-truth homomorphisms and controlled perturbations of them.

An embedding sends each block with a chosen multiplicity into M_N, padded
with a zero corner and conjugated by a fixed unitary.  Perturbations come
in two flavors: additive (a hash-seeded pseudorandom field, genuinely
nonlinear) and conjugation by a near-identity invertible (multiplicative
but not *-preserving).  Discretization quantizes inputs to an entry
lattice, giving the finite-range step-function structure the stabilization
pipeline expects.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .algebra import AlgebraElement, AlgebraShape, identity
from .defects import ApproxMap
from .errors import PreconditionError, SingularMapError
from .probes import ball_probes


@dataclass(frozen=True)
class EmbeddingSpec:
    """Block multiplicities, zero-padding and a conjugating unitary defining
    an exact *-homomorphism x -> W (sum_b x_b (x) 1_{m_b} (+) 0_d) W*."""

    shape: AlgebraShape
    multiplicities: tuple[int, ...]
    padding: int = 0
    conjugator: np.ndarray | None = None

    def __init__(self, shape, multiplicities, padding=0, conjugator=None):
        mults = tuple(int(m) for m in multiplicities)
        if len(mults) != len(shape.blocks) or any(m < 0 for m in mults):
            raise PreconditionError("one nonnegative multiplicity per block required")
        if padding < 0:
            raise PreconditionError("padding must be >= 0")
        n = padding + sum(m * nb for m, nb in zip(mults, shape.blocks))
        if n < 1:
            raise PreconditionError("embedding has dimension 0")
        if conjugator is not None:
            w = np.ascontiguousarray(conjugator, dtype=complex)
            if w.shape != (n, n):
                raise PreconditionError(f"conjugator is {w.shape}, expected ({n}, {n})")
            if la.op_norm(w.conj().T @ w - np.eye(n)) > 1e-10:
                raise PreconditionError("conjugator must be unitary")
            w.setflags(write=False)
        else:
            w = None
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "multiplicities", mults)
        object.__setattr__(self, "padding", padding)
        object.__setattr__(self, "conjugator", w)

    @property
    def dim(self) -> int:
        return self.padding + sum(m * nb for m, nb in
                                  zip(self.multiplicities, self.shape.blocks))

    @property
    def unital(self) -> bool:
        return self.padding == 0

    def embed(self, x: AlgebraElement) -> np.ndarray:
        n = self.dim
        out = np.zeros((n, n), dtype=complex)
        off = 0
        for nb, m, a in zip(self.shape.blocks, self.multiplicities, x.blocks):
            if m:
                out[off:off + nb * m, off:off + nb * m] = np.kron(a, np.eye(m))
                off += nb * m
        if self.conjugator is not None:
            out = self.conjugator @ out @ self.conjugator.conj().T
        return out

    def range_projection(self) -> np.ndarray:
        return self.embed(identity(self.shape))

    def to_dict(self) -> dict:
        w = self.conjugator
        return {
            "shape": list(self.shape.blocks),
            "multiplicities": list(self.multiplicities),
            "padding": self.padding,
            "conjugator": None if w is None else
                [[float(z.real), float(z.imag)] for z in w.ravel()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingSpec":
        shape = AlgebraShape(d["shape"])
        w = d.get("conjugator")
        if w is not None:
            n = d["padding"] + sum(m * nb for m, nb in zip(d["multiplicities"], shape.blocks))
            w = np.array([complex(re, im) for re, im in w]).reshape(n, n)
        return cls(shape, d["multiplicities"], d["padding"], w)

    @classmethod
    def from_json(cls, text: str) -> "EmbeddingSpec":
        return cls.from_dict(json.loads(text))


def haar_conjugator(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0xC0]))
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    return q * (d / np.abs(d))


def exact_homomorphism(spec: EmbeddingSpec) -> ApproxMap:
    """The embedding as an evaluable map; all defects vanish by construction."""
    from .algebra import matrix_units
    basis = np.stack([spec.embed(e) for _, _, _, e in matrix_units(spec.shape)])
    out = ApproxMap.linear(spec.shape, spec.dim, basis,
                           {"kind": "exact", "spec": spec.to_dict()})
    return out


def _hash_normals(seed: int, payload: bytes, count: int) -> np.ndarray:
    """Deterministic standard normals from a hash stream (Box-Muller)."""
    raw = hashlib.shake_256(seed.to_bytes(8, "little") + payload).digest(16 * count)
    u = np.frombuffer(raw, dtype="<u8").astype(np.float64) * 2.0 ** -64
    u1 = np.maximum(u[:count], 2.0 ** -64)
    u2 = u[count:]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _quantized_key(x: AlgebraElement, grid: float = 1e-9) -> bytes:
    v = np.concatenate([a.ravel() for a in x.blocks]).view(np.float64)
    return np.rint(v / grid).astype(np.int64).tobytes()


def perturb_additive(psi: ApproxMap, eta: float, seed: int = 0) -> ApproxMap:
    """psi + eta * g where g is a pseudorandom field with ||g(x)|| <= 1.

    g depends on its input only through a hash of the quantized entries, so
    the perturbed map is a genuine (deterministic) function while being
    nonlinear in its argument.  Normalization is by the Frobenius norm,
    which dominates the operator norm, so the unit bound holds.
    """
    if not 0.0 <= eta < 1.0:
        raise PreconditionError("eta must be in [0, 1)")
    n = psi.dim

    def fn(x: AlgebraElement) -> np.ndarray:
        base = psi(x)
        if eta == 0.0:
            return base
        z = _hash_normals(seed, _quantized_key(x), 2 * n * n)
        g = z[:n * n].reshape(n, n) + 1j * z[n * n:].reshape(n, n)
        g /= np.linalg.norm(g)
        return base + eta * g

    return ApproxMap(psi.domain, n, fn,
                     {**psi.meta, "kind": "additive", "eta": eta, "seed": seed})


def perturb_conjugate(psi: ApproxMap, s: np.ndarray) -> ApproxMap:
    """x -> S psi(x) S^{-1}: exactly multiplicative, *-defect of order ||S - 1||."""
    s = np.ascontiguousarray(s, dtype=complex)
    if s.shape != (psi.dim, psi.dim):
        raise PreconditionError("conjugating matrix has the wrong size")
    dev = la.op_norm(s - np.eye(psi.dim))
    if dev >= 0.5:
        raise PreconditionError(f"need ||S - 1|| < 1/2, got {dev:.3g}")
    try:
        s_inv = la.inv_cond(s)
    except SingularMapError as exc:
        raise SingularMapError("conjugating matrix is singular") from exc

    meta = {**psi.meta, "kind": "conjugate", "s_distance": dev}
    if psi.basis is not None:
        return ApproxMap.linear(psi.domain, psi.dim, s @ psi.basis @ s_inv, meta)

    def fn(x: AlgebraElement) -> np.ndarray:
        return s @ psi(x) @ s_inv

    return ApproxMap(psi.domain, psi.dim, fn, meta)


def near_identity(n: int, dist: float, seed: int = 0, hermitian: bool = True) -> np.ndarray:
    """1 + dist * h with ||h|| = 1 (Hermitian by default)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x51]))
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if hermitian:
        g = la.herm(g)
    g /= la.op_norm(g)
    return np.eye(n) + dist * g


def near_identity_unitary(n: int, dist: float, seed: int = 0) -> np.ndarray:
    """Unitary u with ||u - 1|| equal to dist (exactly, via the arcsin trick)."""
    if dist == 0.0:
        return np.eye(n, dtype=complex)
    if not 0.0 < dist < 2.0:
        raise PreconditionError("unitary distance must lie in (0, 2)")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x52]))
    g = la.herm(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    w, v = np.linalg.eigh(g)
    w = w / np.max(np.abs(w))
    if np.max(w) < 1.0:            # make sure the top of the spectrum is +1
        w = w[::-1] * -1.0
        v = v[:, ::-1]
    theta = 2.0 * math.asin(dist / 2.0)
    return (v * np.exp(1j * theta * w)) @ v.conj().T


def lattice_quantize(x: AlgebraElement, h: float, clip: float = 2.0) -> AlgebraElement:
    """Round entries to the lattice h(Z + iZ), clamped to the largest lattice
    point below ``clip`` in each coordinate.  Idempotent by construction."""
    k = math.floor(clip / h) * h
    mats = []
    for a in x.blocks:
        v = np.clip(np.rint(np.ascontiguousarray(a).view(np.float64) / h) * h, -k, k)
        mats.append(v.view(complex))
    return AlgebraElement._raw(x.shape, tuple(mats))


def mesh_constant(shape: AlgebraShape) -> float:
    """Entry-lattice mesh-to-norm constant sqrt(2 sum n_b^2)."""
    return math.sqrt(2.0 * shape.linear_dim)


def discretize(phi: ApproxMap, grid: float, probe_seed: int = 3,
               probe_count: int = 32) -> ApproxMap:
    """Precompose with entry-lattice quantization: phi'(x) = phi(q(x)).

    The output has finite range on bounded sets and satisfies
    ||phi' - phi|| <= Lip * c(shape) * grid over probes, where Lip is the
    measured modulus of continuity recorded in the metadata.
    """
    if grid <= 0.0:
        raise PreconditionError("grid step must be positive")
    out = phi.compose_input(lambda x: lattice_quantize(x, grid),
                            kind="discretized", grid=grid)
    lip = 0.0
    for x in ball_probes(phi.domain, probe_count, probe_seed):
        q = lattice_quantize(x, grid)
        d = (x - q).norm()
        if d > 1e-15:
            lip = max(lip, la.op_norm(phi(x) - phi(q)) / d)
    bound = lip * mesh_constant(phi.domain) * grid
    out.meta["lipschitz"] = lip
    out.meta["distance_bound"] = bound
    out.meta["defect_inflation_bound"] = 4.0 * bound
    return out


@dataclass(frozen=True)
class InclusionSpec:
    """Unital inclusion of one block algebra into another, given by the
    matrix of multiplicities (rows: target blocks, cols: source blocks)."""

    source: AlgebraShape
    target: AlgebraShape
    counts: tuple[tuple[int, ...], ...]

    def __init__(self, source, target, counts):
        counts = tuple(tuple(int(c) for c in row) for row in counts)
        if len(counts) != len(target.blocks) or any(
                len(row) != len(source.blocks) for row in counts):
            raise PreconditionError("multiplicity matrix shape mismatch")
        for row, nc in zip(counts, target.blocks):
            if sum(m * nb for m, nb in zip(row, source.blocks)) != nc:
                raise PreconditionError(
                    "inclusion is not unital: block sizes do not add up")
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "counts", counts)

    def include(self, x: AlgebraElement) -> AlgebraElement:
        mats = []
        for row, nc in zip(self.counts, self.target.blocks):
            pieces = [np.kron(a, np.eye(m))
                      for m, a in zip(row, x.blocks) if m > 0]
            block = np.zeros((nc, nc), dtype=complex)
            off = 0
            for p in pieces:
                block[off:off + p.shape[0], off:off + p.shape[0]] = p
                off += p.shape[0]
            mats.append(block)
        return AlgebraElement(self.target, mats)

    @classmethod
    def single(cls, source: AlgebraShape, multiplicity: int) -> "InclusionSpec":
        """M_n -> M_{mn} with the given multiplicity (single-block chains)."""
        if len(source.blocks) != 1:
            raise PreconditionError("single() needs a one-block source")
        target = AlgebraShape([source.blocks[0] * multiplicity])
        return cls(source, target, [[multiplicity]])
