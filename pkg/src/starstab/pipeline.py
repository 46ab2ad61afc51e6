"""End-to-end stabilization pipeline and its error budget.

The stage order mirrors the correction strategy: normalize, discretize,
restrict to the unitary group, average until nearly multiplicative,
unitarize, split into irreducible blocks, correct each block to an exact
homomorphism (matrix-unit route by default, one-parameter-group route on
request), and align the assembled map with the target subalgebra.

Stage movements measured over a common unit-ball probe set telescope, so
the final distance obeys the triangle inequality against their sum; group
stages additionally report their own unitary-probe diagnostics.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .algebra import (AlgebraElement, AlgebraShape, _derive_seed, identity,
                      matrix_unit)
from .averaging import (measure_group_map, restrict_to_unitaries, stabilize)
from .config import PipelineConfig
from .defects import ApproxMap, estimate_defect, normalize
from .errors import PreconditionError, StabilityError, StageAbort
from .factory import EmbeddingSpec, discretize, mesh_constant
from .probes import ball_probes, unitary_pairs
from .reps import compress, decompose, lift_projection, stone_generator, unitarize
from .synthesis import matrix_unit_correction, near_inclusion_fix

BUDGET_EPS_MAX = 2.0 ** -12


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps succeeds."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


@dataclass(frozen=True)
class PipelineBudget:
    """The chained error levels of the stabilization argument."""

    eps: float
    eps1: float
    eps2: float
    eps3: float
    eps4: float
    eps5: float
    eps6: float
    K: float
    final_bound: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("eps", "eps1", "eps2", "eps3", "eps4", "eps5", "eps6",
                 "K", "final_bound")}


def compute_budget(eps: float, K: float) -> PipelineBudget:
    """Error levels: 4x for discretization, 8x for averaging movement, the
    Gram/unitarization factors, the per-block commutator budget, the
    correction constant K, and the square-root near-inclusion step."""
    if not eps < BUDGET_EPS_MAX:
        raise PreconditionError(f"budget requires eps < 2^-12, got {eps:.3g}")
    if not eps > 0.0:
        raise PreconditionError("eps must be positive")
    if not K > 0.0:
        raise PreconditionError("K must be positive")
    eps1 = 4.0 * eps
    eps2 = 8.0 * eps1
    eps3 = eps2 * (4.0 + eps2)
    eps4 = 2.0 * (1.0 + eps2) * eps3 / (1.0 - eps3)
    eps5 = 8.0 * (eps4 + eps2) + 9.0 * eps1
    eps6 = K * eps5 + 2.0 * eps4 + 2.0 * eps2
    final = 240.0 * math.sqrt(eps6) + K * eps5 + 2.0 * eps4 + 2.0 * eps2
    return PipelineBudget(eps, eps1, eps2, eps3, eps4, eps5, eps6, K, final)


@dataclass
class StageRecord:
    name: str
    seconds: float
    movement: float = 0.0
    in_triangle: bool = True     # whether the movement enters the telescoping sum
    info: dict = field(default_factory=dict)

    def to_dict(self, include_timing=True) -> dict:
        d = {"name": self.name, "movement": self.movement,
             "in_triangle": self.in_triangle, "info": self.info}
        if include_timing:
            d["seconds"] = self.seconds
        return d


@dataclass
class PipelineReport:
    stages: list
    input_defect: dict
    final_distance: float
    budget: PipelineBudget | None
    l_used: float
    ratio_sqrt: float
    ratio_linear: float
    assertions: list
    seed: int
    config: dict

    def ok(self) -> bool:
        return all(a["ok"] for a in self.assertions)

    def movement_sum(self) -> float:
        return sum(s.movement for s in self.stages if s.in_triangle)

    def to_dict(self, include_timing: bool = True) -> dict:
        return jsonable({
            "stages": [s.to_dict(include_timing) for s in self.stages],
            "input_defect": self.input_defect,
            "final_distance": self.final_distance,
            "budget": None if self.budget is None else self.budget.to_dict(),
            "L": self.l_used,
            "ratio_sqrt": self.ratio_sqrt,
            "ratio_linear": self.ratio_linear,
            "assertions": self.assertions,
            "seed": self.seed,
            "config": self.config,
        })

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing))

    def canonical_json(self) -> str:
        """Timing-free form: bit-identical across runs for fixed config+seed."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True)


def _auto_grid(eps: float, shape: AlgebraShape) -> float:
    # power-of-two step keeps 0, 1 and the quantization lattice float-exact
    c = mesh_constant(shape)
    k = math.ceil(math.log2(8.0 * c / max(eps, 1e-13)))
    return 2.0 ** -min(48, max(10, k))


def _sup_dist(f, g, probes) -> float:
    return max(la.op_norm(f(x) - g(x)) for x in probes)


class _StageClock:
    def __init__(self, report_stages):
        self.stages = report_stages

    def run(self, name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except StabilityError as exc:
            raise StageAbort(name, exc, report=self.stages) from exc
        rec = StageRecord(name, time.perf_counter() - t0)
        self.stages.append(rec)
        return out, rec


def _stone_block_map(pi_block, domain: AlgebraShape, verify_tol: float,
                     snap_tol: float) -> ApproxMap:
    """Assemble a block homomorphism from lifted projections and lifted
    self-adjoint swap unitaries: psi(e_ij) = q_i rho(swap_ij) q_j."""
    dim = pi_block.dim
    one = identity(domain)
    kw = dict(verify_tol=verify_tol, snap_tol=snap_tol)
    units: dict[tuple, np.ndarray] = {}
    for b, n in enumerate(domain.blocks):
        qs = [lift_projection(pi_block, matrix_unit(domain, b, i, i), **kw)
              for i in range(n)]
        for i in range(n):
            units[(b, i, i)] = qs[i]
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                swap = (matrix_unit(domain, b, i, j) + matrix_unit(domain, b, j, i)
                        + one - matrix_unit(domain, b, i, i) - matrix_unit(domain, b, j, j))
                rho = stone_generator(pi_block, swap, **kw)
                units[(b, i, j)] = qs[i] @ rho @ qs[j]

    def fn(x: AlgebraElement) -> np.ndarray:
        out = np.zeros((dim, dim), dtype=complex)
        for b, a in enumerate(x.blocks):
            for i in range(a.shape[0]):
                for j in range(a.shape[0]):
                    if a[i, j] != 0.0:
                        out = out + a[i, j] * units[(b, i, j)]
        return out

    return ApproxMap(domain, dim, fn, {"kind": "stone-lift"})


def run_pipeline(phi: ApproxMap, config: PipelineConfig | None = None,
                 target: EmbeddingSpec | None = None):
    """Produce an exact *-homomorphism close to ``phi`` plus a stage report.

    Raises StageAbort (carrying the completed-stage prefix) when a stage's
    hypothesis fails.  Assertion outcomes, including the configured final
    bound L sqrt(eps), are recorded in the report rather than raised.
    """
    config = config or PipelineConfig()
    seed = config.seed
    shape = phi.domain
    stages: list[StageRecord] = []
    clock = _StageClock(stages)
    probes = ball_probes(shape, config.probes, _derive_seed(seed, "ball"))
    pairs = unitary_pairs(shape, config.group_probes, _derive_seed(seed, "pairs"))
    probe_us = [u for u, _ in pairs] + [v for _, v in pairs]

    report_in = estimate_defect(phi, config.probes,
                                det_cap=config.det_cap)
    eps_in = max(report_in.epsilon, 1e-15)
    if eps_in >= config.admissible_eps:
        raise StageAbort("admissibility",
                         PreconditionError(
                             f"measured defect {eps_in:.3g} exceeds "
                             f"admissible {config.admissible_eps:.3g}"),
                         report=stages)
    budget = compute_budget(eps_in, config.K) if eps_in < BUDGET_EPS_MAX else None

    # 1. normalize -----------------------------------------------------------
    (phi1, rec) = clock.run("normalize", lambda: normalize(phi, samples=min(64, config.probes)))
    rec.movement = _sup_dist(phi1, phi, probes)
    rec.info = {"scale": phi1.meta.get("scale", 1.0),
                "unit_rounding_moved": phi1.meta.get("unit_rounding_moved", 0.0)}

    # 2. discretize ----------------------------------------------------------
    h = config.grid_h if config.grid_h > 0.0 else _auto_grid(eps_in, shape)
    (phi2, rec) = clock.run("discretize", lambda: discretize(phi1, h))
    rec.movement = _sup_dist(phi2, phi1, probes)
    rec.info = {"grid": h, "distance_bound": phi2.meta["distance_bound"]}

    # 3. corner restriction (non-unital inputs) ------------------------------
    p_one = phi2(identity(shape))
    rank = int(round(float(np.real(np.trace(p_one)))))
    corner = la.op_norm(p_one - np.eye(phi.dim)) > 1e-9
    if corner:
        def make_corner():
            q = la.orthonormal_range(p_one, rank)
            inner = ApproxMap(shape, rank, lambda x: q.conj().T @ phi2(x) @ q,
                              {**phi2.meta, "corner_rank": rank})
            return q, inner
        ((q_iso, phi3), rec) = clock.run("corner", make_corner)
        rec.movement = max(
            la.op_norm(q_iso @ (q_iso.conj().T @ phi2(x) @ q_iso) @ q_iso.conj().T - phi2(x))
            for x in probes)
        rec.info = {"rank": rank}
    else:
        q_iso, phi3 = None, phi2
        stages.append(StageRecord("corner", 0.0, info={"rank": rank, "skipped": True}))
    work_dim = phi3.dim

    # 4. restrict to the unitary group ---------------------------------------
    def make_group():
        rho = restrict_to_unitaries(phi3, seed=_derive_seed(seed, "group"))
        kappa0 = max(la.op_norm(la.inv_cond(rho(u))) for u in probe_us)
        if kappa0 > 2.0 + 1e-6:
            raise PreconditionError(
                f"inverse bound {kappa0:.3g} exceeds 2 on unitary probes")
        return rho, kappa0
    ((rho0, kappa0), rec) = clock.run("unitary-restriction", make_group)
    rec.in_triangle = False
    rec.info = {"kappa0": kappa0}

    # 5. averaging -----------------------------------------------------------
    m0 = measure_group_map(rho0, pairs, config.mc_batches)
    eps1 = max(4.0 * eps_in, m0.delta + m0.mc, 1e-13)
    (stab, rec) = clock.run("stabilize", lambda: stabilize(
        rho0, eps1, config.tol, config.mc_width,
        max_levels=config.max_levels, probe_pairs=pairs,
        batches=config.mc_batches))
    rec.movement = stab.movement
    rec.in_triangle = False
    eps2_meas = stab.movement + sum(p.after.closeness_mc for p in stab.levels)
    post = stab.levels[-1].after if stab.levels else stab.initial
    rec.info = {"levels": len(stab.levels), "strict": stab.strict,
                "stopped_by": stab.stopped_by, "eps1": eps1,
                "defect": post.delta, "mc": post.mc,
                "trace": stab.trace_rows()}

    # 6. unitarize ------------------------------------------------------------
    snap_tol = config.snap_tol if config.snap_tol > 0.0 else \
        min(0.5, max(1e-3, 10.0 * (post.delta + post.mc)))
    (unit_out, rec) = clock.run("unitarize", lambda: unitarize(
        stab.final, config.unitarize_width, probe_us=probe_us,
        batches=config.mc_batches, eps2=eps2_meas, snap_tol=snap_tol,
        seed=seed))
    unitarizer, pi, unit_info = unit_out
    rec.movement = unit_info["movement"]
    rec.in_triangle = False
    rec.info = unit_info
    eps4_meas = unit_info["movement"] + unit_info["mc"]

    # 7. irreducible decomposition --------------------------------------------
    defect_hint = max(post.delta + post.mc, 1e-12)
    dec_tol = config.decompose_tol if config.decompose_tol > 0.0 else \
        max(1e-8, 8.0 * (post.delta + post.mc) + 4.0 * unit_info["mc"])
    (blocks, rec) = clock.run("decompose", lambda: decompose(
        pi, config.generator_count, tol=dec_tol,
        seed=_derive_seed(seed, "decompose"), defect_hint=defect_hint))
    rec.in_triangle = False
    rec.info = {"block_dims": list(blocks.block_dims), "residual": blocks.residual}

    # commutator transport diagnostics
    comm_u = max(la.op_norm(phi3(u) @ p - p @ phi3(u))
                 for u in probe_us for p in blocks.projections)
    comm_bound = 2.0 * (eps4_meas + eps2_meas) + 2.0 * blocks.residual \
        + post.mc + 1e-9
    comm_a = max(la.op_norm(phi3(x) @ p - p @ phi3(x))
                 for x in probes[:24] for p in blocks.projections)
    comm_a_bound = 8.0 * (eps4_meas + eps2_meas) + 8.0 * eps1 \
        + 8.0 * blocks.residual + post.mc + 1e-9

    # 8. per-block correction --------------------------------------------------
    def correct_blocks():
        isoms = blocks.isometries()
        maps = []
        residual = 0.0
        mult_total = [0] * len(shape.blocks)
        for v_k in isoms:
            phi_k = ApproxMap(shape, v_k.shape[1],
                              lambda x, v=v_k: v.conj().T @ phi3(x) @ v)
            if config.path == "stone":
                pi_k = compress(pi, v_k, snap_tol=max(1e-6, 4.0 * dec_tol))
                verify = config.stone_verify_tol if config.stone_verify_tol > 0.0 \
                    else max(1e-6, 30.0 * (post.delta + post.mc) + 10.0 * blocks.residual)
                psi_k = _stone_block_map(pi_k, shape, verify,
                                         snap_tol=max(1e-3, verify))
                info_k = {"path": "stone"}
                mult_total = None
            else:
                eps5_k = estimate_defect(phi_k, 24, det_cap=8).epsilon
                adm = config.correction_admissible if config.correction_admissible > 0.0 \
                    else max(1e-2, 2.0 * eps5_k)
                _, psi_k, info_k = matrix_unit_correction(
                    phi_k, tol=1e-9, eps=eps5_k, admissible=adm,
                    assert_factor=config.correction_factor)
                residual = max(residual, info_k["relation_residual"])
                if mult_total is not None:
                    mult_total = [a + b for a, b in
                                  zip(mult_total, info_k["multiplicities"])]
            maps.append((v_k, psi_k))

        def fn(x: AlgebraElement) -> np.ndarray:
            out = np.zeros((work_dim, work_dim), dtype=complex)
            for v_k, psi_k in maps:
                out = out + v_k @ psi_k(x) @ v_k.conj().T
            return out
        return ApproxMap(shape, work_dim, fn, {"kind": "blockwise"}), residual, mult_total

    ((psi_blocks, corr_residual, mults), rec) = clock.run("block-correction", correct_blocks)
    if corner:
        rec.movement = max(
            la.op_norm(q_iso @ (psi_blocks(x) - phi3(x)) @ q_iso.conj().T)
            for x in probes)
    else:
        rec.movement = _sup_dist(psi_blocks, phi3, probes)
    rec.info = {"path": config.path, "relation_residual": corr_residual,
                "multiplicities": mults}

    # 9. near-inclusion alignment ----------------------------------------------
    if target is None:
        target_spec = EmbeddingSpec(AlgebraShape([work_dim]), (1,), 0)
    else:
        if target.dim != work_dim:
            raise StageAbort("near-inclusion",
                             PreconditionError("target dimension mismatch "
                                               f"({target.dim} vs {work_dim})"),
                             report=stages)
        target_spec = target
    kw = {}
    if config.correction_admissible > 0.0:
        kw["admissible"] = config.correction_admissible
    else:
        kw["admissible"] = max(1e-2, 4.0 * eps_in, 4.0 * corr_residual)
    kw["assert_factor"] = config.correction_factor
    (ni_out, rec) = clock.run("near-inclusion", lambda: near_inclusion_fix(
        psi_blocks, target_spec, tol=1e-9, probes=probes[:48],
        correction_kwargs=kw))
    v_align, psi_work, ni_info = ni_out
    if corner:
        rec.movement = max(
            la.op_norm(q_iso @ (psi_work(x) - psi_blocks(x)) @ q_iso.conj().T)
            for x in probes)
    else:
        rec.movement = _sup_dist(psi_work, psi_blocks, probes)
    rec.info = {k: ni_info[k] for k in
                ("eps6", "v_deviation", "v_bound", "v_ok", "movement",
                 "movement_bound", "movement_ok")}

    # 10. re-embed a corner restriction ----------------------------------------
    if corner:
        def fn(x: AlgebraElement, q=q_iso) -> np.ndarray:
            return q @ psi_work(x) @ q.conj().T
        psi = ApproxMap(shape, phi.dim, fn, {"kind": "recovered"})
    else:
        psi = ApproxMap(shape, phi.dim, psi_work.fn, {"kind": "recovered"})

    final_distance = _sup_dist(psi, phi, probes)
    out_defect = estimate_defect(psi, min(config.probes, 64), det_cap=config.det_cap)

    if config.L > 0.0:
        l_used = config.L
    elif budget is not None:
        l_used = budget.final_bound / math.sqrt(eps_in)
    else:
        l_used = 25.0
    ratio_sqrt = final_distance / math.sqrt(eps_in)
    ratio_linear = final_distance / eps_in
    movement_sum = sum(s.movement for s in stages if s.in_triangle)

    assertions = [
        {"name": "final-distance-le-L-sqrt-eps", "value": final_distance,
         "bound": l_used * math.sqrt(eps_in),
         "ok": final_distance <= l_used * math.sqrt(eps_in)},
        {"name": "triangle-inequality", "value": final_distance,
         "bound": movement_sum + 1e-8,
         "ok": final_distance <= movement_sum + 1e-8},
        {"name": "output-is-exact", "value": out_defect.epsilon,
         "bound": 1e-8, "ok": out_defect.epsilon <= 1e-8},
        {"name": "unitary-commutator-transport", "value": comm_u,
         "bound": comm_bound, "ok": comm_u <= comm_bound},
        {"name": "ball-commutator-transport", "value": comm_a,
         "bound": comm_a_bound, "ok": comm_a <= comm_a_bound},
        {"name": "unitarizer-deviation", "value": unit_info["t_deviation"],
         "bound": unit_info["t_deviation_bound"], "ok": unit_info["t_deviation_ok"]},
        {"name": "near-inclusion-v", "value": ni_info["v_deviation"],
         "bound": ni_info["v_bound"], "ok": ni_info["v_ok"]},
        {"name": "near-inclusion-movement", "value": ni_info["movement"],
         "bound": ni_info["movement_bound"], "ok": ni_info["movement_ok"]},
    ]
    report = PipelineReport(
        stages=stages,
        input_defect=report_in.to_dict(),
        final_distance=final_distance,
        budget=budget,
        l_used=l_used,
        ratio_sqrt=ratio_sqrt,
        ratio_linear=ratio_linear,
        assertions=assertions,
        seed=seed,
        config=config.to_dict(),
    )
    psi.meta["report_ok"] = report.ok()
    psi.meta["output_defect"] = out_defect.to_dict()
    return psi, report
