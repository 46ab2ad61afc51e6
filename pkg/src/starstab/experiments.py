"""Experiment drivers: recovery sweeps, the Kadison-Kastler comparison and
the finite-tower uniformity check.

The Kadison-Kastler experiment builds two conjugate copies of an embedded
algebra, estimates their distance from probe witnesses, constructs the
norm-preserving nearest-point map between them, and feeds that map through
the recovery pipeline; the recovered exact isomorphism is compared with
the identity.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .algebra import AlgebraElement, AlgebraShape, _derive_seed
from .config import PipelineConfig
from .defects import ApproxMap, estimate_defect
from .errors import PreconditionError
from .factory import (EmbeddingSpec, InclusionSpec, exact_homomorphism,
                      haar_conjugator, near_identity_unitary, perturb_additive)
from .pipeline import PipelineReport, jsonable, run_pipeline
from .probes import ball_probes, sphere_probes
from .synthesis import TraceExpectation


@dataclass(frozen=True)
class KKEstimate:
    """Probe-based bracket on the distance between two subalgebra copies."""

    lower: float
    upper: float
    probe_count: int

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise PreconditionError("estimate bracket inverted")

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper,
                "probe_count": self.probe_count}


@dataclass
class KKReport:
    estimate: KKEstimate
    eta: float
    phi_defect: dict
    phi_distance_to_identity: float
    recovered_distance: float
    pipeline: PipelineReport
    assertions: list

    def ok(self) -> bool:
        return all(a["ok"] for a in self.assertions) and self.pipeline.ok()

    def to_dict(self, include_timing: bool = True) -> dict:
        return jsonable({
            "estimate": self.estimate.to_dict(),
            "eta": self.eta,
            "phi_defect": self.phi_defect,
            "phi_distance_to_identity": self.phi_distance_to_identity,
            "recovered_distance": self.recovered_distance,
            "assertions": self.assertions,
            "pipeline": self.pipeline.to_dict(include_timing),
        })


def _nearest_candidates(y: np.ndarray, radius: float, conj: np.ndarray,
                        exp: TraceExpectation):
    """Norm-preserving candidates in the other copy: the conjugation witness
    and the rescaled trace-expectation image."""
    cands = [conj @ y @ conj.conj().T]
    p = exp.project(y)
    nrm = la.op_norm(p)
    if nrm > 1e-14 and radius > 0.0:
        cands.append(p * (radius / nrm))
    elif radius == 0.0:
        cands.append(np.zeros_like(p))
    return cands


def kk_experiment(spec: EmbeddingSpec, eta: float,
                  config: PipelineConfig | None = None,
                  delta: float | None = None) -> KKReport:
    """Distance bracket and pipeline recovery for two close copies
    A1 = image(spec), A2 = u A1 u* with ||u - 1|| = eta."""
    config = config or PipelineConfig()
    if not eta < 0.1:
        raise PreconditionError("experiment requires eta < 1/10")
    if not spec.unital:
        raise PreconditionError("copies must be unital subalgebras")
    n = spec.dim
    shape = spec.shape
    u = near_identity_unitary(n, eta, seed=_derive_seed(config.seed, "kk-u"))
    w1 = spec.conjugator if spec.conjugator is not None else np.eye(n, dtype=complex)
    spec2 = EmbeddingSpec(shape, spec.multiplicities, spec.padding, u @ w1)
    psi1 = exact_homomorphism(spec)
    psi2 = exact_homomorphism(spec2)
    exp1 = TraceExpectation(spec)
    exp2 = TraceExpectation(spec2)

    count = max(16, config.probes // 8)
    sphere = sphere_probes(shape, count, _derive_seed(config.seed, "kk-sphere"))
    lower = upper = 0.0
    u_star = u.conj().T
    for a in sphere:
        r = a.norm()
        x1 = psi1(a)
        d1 = min(la.op_norm(x1 - c) for c in _nearest_candidates(x1, r, u, exp2))
        lower1 = la.frob(x1 - exp2.project(x1)) / math.sqrt(n)
        x2 = psi2(a)
        d2 = min(la.op_norm(x2 - c) for c in _nearest_candidates(x2, r, u_star, exp1))
        lower2 = la.frob(x2 - exp1.project(x2)) / math.sqrt(n)
        upper = max(upper, d1, d2)
        lower = max(lower, lower1, lower2)
    estimate = KKEstimate(lower, upper, 2 * len(sphere))

    def proxy(a: AlgebraElement) -> np.ndarray:
        y = psi1(a)
        cands = _nearest_candidates(y, a.norm(), u, exp2)
        return min(cands, key=lambda c: la.op_norm(y - c))

    phi = ApproxMap(shape, n, proxy, {"kind": "kk-nearest-point", "eta": eta})
    phi_defect = estimate_defect(phi, min(config.probes, 96), det_cap=config.det_cap)
    ball = ball_probes(shape, min(config.probes, 96), _derive_seed(config.seed, "kk-ball"))
    # distances to the identity are homogeneous, so the sphere probes used
    # for the bracket are the right comparison set
    phi_dist = max(la.op_norm(phi(x) - psi1(x)) for x in sphere)

    psi, rep = run_pipeline(phi, config, target=spec2)
    recovered = max(la.op_norm(psi(x) - psi1(x)) for x in ball)

    delta_claim = delta if delta is not None else 8.0 * eta
    assertions = [
        {"name": "upper-bound-2eta", "value": estimate.upper,
         "bound": 2.0 * eta + 1e-6, "ok": estimate.upper <= 2.0 * eta + 1e-6},
        {"name": "bracket-order", "value": estimate.lower,
         "bound": estimate.upper, "ok": estimate.lower <= estimate.upper + 1e-12},
        {"name": "phi-close-to-identity", "value": phi_dist,
         "bound": estimate.upper + 1e-9, "ok": phi_dist <= estimate.upper + 1e-9},
        {"name": "phi-defect-within-delta", "value": phi_defect.epsilon,
         "bound": delta_claim + 1e-9, "ok": phi_defect.epsilon <= delta_claim + 1e-9},
        {"name": "recovered-close-to-identity", "value": recovered,
         "bound": config.kk_tol, "ok": recovered <= config.kk_tol},
    ]
    return KKReport(estimate, eta, phi_defect.to_dict(), phi_dist,
                    recovered, rep, assertions)


@dataclass
class TowerStage:
    index: int
    shape: str
    distance: float
    ratio: float | None
    report: PipelineReport


@dataclass
class TowerReport:
    eta: float
    stages: list
    slack: float
    assertions: list = field(default_factory=list)

    def ok(self) -> bool:
        return all(a["ok"] for a in self.assertions) and \
            all(s.report.ok() for s in self.stages)

    def to_dict(self, include_timing: bool = True) -> dict:
        return jsonable({
            "eta": self.eta,
            "slack": self.slack,
            "stages": [{"index": s.index, "shape": s.shape,
                        "distance": s.distance, "ratio": s.ratio,
                        "report": s.report.to_dict(include_timing)}
                       for s in self.stages],
            "assertions": self.assertions,
        })


def tower_experiment(inclusions: list[InclusionSpec], eta: float,
                     config: PipelineConfig | None = None,
                     top_shape: AlgebraShape | None = None) -> TowerReport:
    """Perturb an exact embedding of the top algebra of a unital tower and
    measure the recovery constant of the pipeline restricted to each floor.

    A single-stage chain (no inclusions, ``top_shape`` given) degenerates to
    one plain pipeline run.
    """
    config = config or PipelineConfig()
    shapes = []
    if inclusions:
        for k, inc in enumerate(inclusions):
            shapes.append(inc.source)
            if k + 1 < len(inclusions) and inc.target != inclusions[k + 1].source:
                raise PreconditionError("inclusion chain does not compose")
        shapes.append(inclusions[-1].target)
    elif top_shape is not None:
        shapes.append(top_shape)
    else:
        raise PreconditionError("tower needs at least one floor")
    top = shapes[-1]
    psi_top = exact_homomorphism(EmbeddingSpec(top, tuple(1 for _ in top.blocks), 0))
    phi = perturb_additive(psi_top, eta, seed=_derive_seed(config.seed, "tower"))

    stages = []
    for s, shape in enumerate(shapes):
        def include(x: AlgebraElement, start=s) -> AlgebraElement:
            for inc in inclusions[start:]:
                x = inc.include(x)
            return x
        phi_s = phi.compose_input(include, domain=shape, floor=s)
        psi_s, rep = run_pipeline(phi_s, config)
        ratio = rep.final_distance / eta if eta > 0.0 else None
        stages.append(TowerStage(s, shape.label(), rep.final_distance, ratio, rep))

    report = TowerReport(eta, stages, config.tower_slack)
    if eta > 0.0:
        ratios = [s.ratio for s in stages]
        floor = max(min(ratios), 1e-12)
        spread = max(ratios) / floor
        report.assertions.append(
            {"name": "recovery-ratio-spread", "value": spread,
             "bound": config.tower_slack, "ok": spread <= config.tower_slack})
    else:
        worst = max(s.distance for s in stages)
        report.assertions.append(
            {"name": "exact-tower-fixed-point", "value": worst,
             "bound": 1e-8, "ok": worst <= 1e-8})
    return report


@dataclass
class SweepRow:
    experiment_id: str
    shape: str
    dim: int
    eta: float
    eps_measured: float
    final_distance: float
    ratio_sqrt: float
    ratio_linear: float
    seconds: float

    def csv_values(self):
        return [self.experiment_id, self.shape, self.dim, repr(self.eta),
                repr(self.eps_measured), repr(self.final_distance),
                repr(self.ratio_sqrt), repr(self.ratio_linear),
                repr(self.seconds)]


SWEEP_COLUMNS = ["experiment_id", "shape", "N", "eta", "eps_measured",
                 "final_distance", "ratio_sqrt", "ratio_linear", "seconds"]

DEFAULT_SWEEP_GRID = (
    # (shape, multiplicities, padding)
    ("2", (3,), 0),
    ("3", (2,), 0),
    ("1+2", (2, 1), 0),
    ("2+2", (1, 2), 0),
)


def sweep_instances(etas, repeats: int, config: PipelineConfig,
                    grid=DEFAULT_SWEEP_GRID):
    """Yield (experiment_id, phi, psi0) additive-perturbation instances."""
    idx = 0
    for eta in etas:
        for label, mults, pad in grid:
            shape = AlgebraShape.parse(label)
            for r in range(repeats):
                seed = _derive_seed(config.seed, "sweep", idx)
                n = pad + sum(m * nb for m, nb in zip(mults, shape.blocks))
                w = haar_conjugator(n, seed)
                spec = EmbeddingSpec(shape, mults, pad, w)
                psi0 = exact_homomorphism(spec)
                phi = perturb_additive(psi0, eta, seed=seed)
                exp_id = f"{idx:03d}-{label}-eta{eta:g}-r{r}"
                yield exp_id, phi, psi0, eta
                idx += 1


def run_sweep(etas, repeats: int, config: PipelineConfig | None = None,
              grid=DEFAULT_SWEEP_GRID):
    """Run the recovery pipeline over the instance grid.

    Returns (rows, details) where rows follow the fixed CSV schema and
    details carries the full pipeline reports keyed by experiment id.
    """
    config = config or PipelineConfig()
    rows = []
    details = {}
    for exp_id, phi, psi0, eta in sweep_instances(etas, repeats, config, grid):
        t0 = time.perf_counter()
        psi, rep = run_pipeline(phi, config)
        dt = time.perf_counter() - t0
        eps = rep.input_defect["epsilon"]
        rows.append(SweepRow(
            exp_id, phi.domain.label(), phi.dim, eta, eps,
            rep.final_distance,
            rep.final_distance / math.sqrt(max(eta, 1e-15)),
            rep.final_distance / max(eta, 1e-15),
            dt))
        details[exp_id] = {"report": rep, "psi": psi, "psi0": psi0}
    rows.sort(key=lambda r: r.experiment_id)
    return rows, details


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in sorted(rows, key=lambda r: r.experiment_id):
        w.writerow(row.csv_values())
    return buf.getvalue()
