"""Inversion of marginal log-linear parameters back to joint tables.

Four routes, dispatched automatically from the classification chain:

* sequential *hierarchical* reconstruction: margins are rebuilt in the
  witness order, each one solved from its already-known sub-margins plus
  the log-linear coefficients assigned to it (a mixed mean/natural
  coordinate problem solved by proportional-fitting sweeps with a Newton
  finish);
* the *fixed-point* iteration eta <- eta + damping * (target - lam(eta)),
  swept margin block by margin block, with a contraction certificate from
  the derivative-column bounds when the collection has the single-feedback
  structure;
* *Markov-chain* recovery for cyclic conditionals: the composed transition
  matrix of the cycle has the missing group marginal as its unique
  stationary distribution (direct linear solve, power iteration as a
  cross-check);
* a damped fixed point followed by a multi-start *Newton* solve with the
  analytic Jacobian for collections without a proven route.

Reduction steps found by the classifier (variable removal, per-slice
removal, parameter interchanges, subsystem relocation) are replayed
exactly: each transforms the target vector using the margin-change term of
the conditional distribution that the already-known parameters pin down.

Every solve is deterministic given (spec, target, options, seed); solves
share no state and can run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import classify as cls
from .errors import (
    ALL_METHODS_FAILED,
    InvalidTableError,
    DIVERGENCE,
    INCONSISTENT_MARGINS,
    NON_CONVERGENCE,
    SolverError,
    SpecError,
    StructureError,
)
from .mll import (
    MLLSpec,
    MLLVector,
    Pair,
    decompose_f,
    jacobian_array,
    lambda_array,
    margin_kernel_array,
    margin_lambda_array,
)
from .tables import (
    ConditionalTable,
    JointTable,
    VarSet,
    bit_positions,
    compress,
    compress_map,
    condition,
    eta_from_dict,
    fwht,
    joint_from_conditional,
    marginal_array,
    marginalize,
    nonempty_submasks,
    popcount,
    table_from_eta,
)

METHODS = ("AUTO", "FIXED_POINT", "HIERARCHICAL", "MARKOV", "NEWTON")


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 10000
    damping: float = 1.0
    method: str = "AUTO"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise SpecError("tol must be positive")
        if self.max_iter < 1:
            raise SpecError("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise SpecError("damping must lie in (0, 1]")
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {METHODS}")


@dataclass(frozen=True)
class SolveResult:
    table: JointTable
    iterations: int
    final_residual: float
    method_used: str
    contraction_certificate: float | None = None
    trace: tuple[float, ...] = field(default_factory=tuple)

    def to_json_obj(self, include_trace: bool = False) -> dict:
        out = {
            "table": {
                "variables": list(self.table.vars.names),
                "p": [float(x) for x in self.table.p],
            },
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "method_used": self.method_used,
            "contraction_certificate": self.contraction_certificate,
        }
        if include_trace:
            out["trace"] = list(self.trace)
        return out


# ---------------------------------------------------------------------------
# Raw-array helpers
# ---------------------------------------------------------------------------

def _probs_from_eta(eta: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        s = fwht(eta)
    if not np.all(np.isfinite(s)):
        raise SolverError(DIVERGENCE, "log scale overflowed during iteration")
    s -= s.max()
    p = np.exp(s)
    return p / p.sum()


def _target_dict(target: MLLVector) -> dict[Pair, float]:
    return {p: float(v) for p, v in zip(target.spec.pairs, target.values)}


def _residual(p: np.ndarray, n: int, spec: MLLSpec, tvals: np.ndarray) -> float:
    return float(np.max(np.abs(lambda_array(p, n, spec) - tvals)))


def _check_target(spec: MLLSpec, target: MLLVector) -> None:
    if target.spec.pairs != spec.pairs or target.spec.vars.names != spec.vars.names:
        raise SpecError("target vector does not match the spec")


def _verify(spec: MLLSpec, target: MLLVector, p: np.ndarray, tol: float) -> float:
    res = _residual(p, spec.vars.n, spec, target.values)
    if res > tol:
        raise SolverError(
            NON_CONVERGENCE,
            f"reassembled table misses the target by {res:.3e} (tol {tol:.1e})",
        )
    return res


def _finish_table(spec: MLLSpec, p: np.ndarray, trace: list[float]) -> JointTable:
    """Converged iterates must still be valid strictly positive tables; a
    floor violation means the target lies outside the supported domain."""
    try:
        return JointTable(spec.vars, p)
    except InvalidTableError as exc:
        raise SolverError(
            NON_CONVERGENCE, f"converged point is not a valid table: {exc}", trace
        ) from exc


def _conditional_from_values(
    vars: VarSet, target_mask: int, given_mask: int, values: Mapping[int, float]
) -> ConditionalTable:
    """Conditional p(x_target | x_given) pinned by the parameters of the
    margin target|given whose effects meet the target; effects inside the
    conditioning set do not matter and are set to zero."""
    both = target_mask | given_mask
    sub = vars.restrict(both)
    entries = {compress(e, both): v for e, v in values.items()}
    t = table_from_eta(eta_from_dict(sub, entries))
    return condition(
        t,
        sub.mask_of(vars.names_of(target_mask)),
        sub.mask_of(vars.names_of(given_mask)),
    )


# ---------------------------------------------------------------------------
# Fixed-point iteration
# ---------------------------------------------------------------------------

def invert_fixed_point(
    spec: MLLSpec, target: MLLVector, opts: SolveOptions = SolveOptions()
) -> SolveResult:
    """Iterate eta_L <- eta_L + damping * (target_LM - lam_LM(eta)) for
    every pair, sweeping margin blocks from the full margin downwards and
    refreshing the table between blocks.  Starts from the uniform table.

    Raises NON_CONVERGENCE when the residual is still above tol after
    max_iter sweeps, DIVERGENCE when it grows tenfold above its running
    minimum.
    """
    if not spec.is_complete():
        raise StructureError("fixed-point inversion needs a complete spec")
    _check_target(spec, target)
    n = spec.vars.n
    tmap = _target_dict(target)
    margins = sorted(spec.margins, key=lambda m: (-popcount(m), m))
    by_margin = [
        (m, [(e, compress(e, m)) for e, mm in spec.pairs if mm == m])
        for m in margins
    ]
    eta = np.zeros(spec.vars.n_cells)
    trace: list[float] = []
    best = math.inf
    for it in range(1, opts.max_iter + 1):
        for margin, effects in by_margin:
            p = _probs_from_eta(eta)
            lam_m = margin_lambda_array(p, n, margin)
            for effect, idx in effects:
                eta[effect] += opts.damping * (tmap[(effect, margin)] - lam_m[idx])
        p = _probs_from_eta(eta)
        res = _residual(p, n, spec, target.values)
        trace.append(res)
        if res <= opts.tol:
            table = _finish_table(spec, p, trace)
            cert = None
            if cls.rule_applies(spec, "single_feedback") is not None:
                cert = contraction_certificate(spec, table)
            return SolveResult(table, it, res, "fixed_point", cert, tuple(trace))
        best = min(best, res)
        if it > 3 and res > 10.0 * best:
            raise SolverError(
                DIVERGENCE,
                f"residual {res:.3e} grew tenfold over its minimum {best:.3e}",
                trace,
            )
    raise SolverError(
        NON_CONVERGENCE,
        f"residual {trace[-1]:.3e} above tol {opts.tol:.1e} after "
        f"{opts.max_iter} sweeps",
        trace,
    )


def contraction_certificate(spec: MLLSpec, t: JointTable) -> float:
    """Largest squared derivative-column norm of the fixed-point map at t.

    Requires the single-feedback structure: each proper-margin pair sees at
    most one other proper margin its effect is not inside.  The column of
    such an effect then only carries the derivatives of that one margin's
    parameters, whose squared sum stays below 1 - min_cell.  Full-margin
    effects are exact after one sweep and contribute no feedback.
    """
    if cls.rule_applies(spec, "single_feedback") is None:
        raise StructureError(
            "contraction certificate needs the single-feedback margin structure"
        )
    full = spec.vars.full_mask
    proper = spec.proper_margins
    kernels: dict[int, np.ndarray] = {}
    worst = 0.0
    for effect, margin in spec.pairs:
        if margin == full:
            continue
        feeders = [nm for nm in proper if nm != margin and (effect & ~nm)]
        if not feeders:
            continue
        nm = feeders[0]
        if nm not in kernels:
            kernels[nm] = margin_kernel_array(t.p, t.n, nm)
        g = kernels[nm]
        col = sum(g[effect ^ ce] ** 2 for ce, cm in spec.pairs if cm == nm)
        worst = max(worst, float(col))
    return worst


# ---------------------------------------------------------------------------
# Mixed mean/natural-coordinate reconstruction
# ---------------------------------------------------------------------------

def reconstruct_mixed(
    vars_m: VarSet,
    margins: Sequence[JointTable],
    eta_targets: Mapping[int, float],
    opts: SolveOptions = SolveOptions(),
    ipf_sweeps: int = 25,
    newton_iters: int = 200,
) -> JointTable:
    """Table over ``vars_m`` matching every given sub-margin table and the
    log-linear coefficients of the effects no sub-margin covers.

    Proportional-fitting sweeps alternate with coefficient resets; a Newton
    solve on the covered-moment equations finishes when the alternation has
    not already converged.  Raises INCONSISTENT_MARGINS when the given
    margins contradict each other and NON_CONVERGENCE on failure.
    """
    m = vars_m.n
    size = vars_m.n_cells
    sub_masks: list[int] = []
    sub_p: list[np.ndarray] = []
    for tbl in margins:
        mask = vars_m.mask_of(tbl.vars.names)
        names_sorted = vars_m.names_of(mask)
        if tuple(tbl.vars.names) != names_sorted:
            perm = np.zeros(tbl.vars.n_cells, dtype=np.int64)
            for idx in range(tbl.vars.n_cells):
                cell = 0
                for j, nm in enumerate(names_sorted):
                    if idx >> j & 1:
                        cell |= 1 << tbl.vars.position(nm)
                perm[idx] = cell
            sub_p.append(tbl.p[perm])
        else:
            sub_p.append(np.asarray(tbl.p, dtype=np.float64))
        sub_masks.append(mask)

    covered: set[int] = set()
    for mask in sub_masks:
        covered.update(nonempty_submasks(mask))
    uncovered = [L for L in range(1, size) if L not in covered]
    if set(eta_targets) != set(uncovered):
        raise SpecError(
            "eta targets must cover exactly the effects outside the given margins"
        )

    # target moments for covered effects; verify overlap consistency
    mu_star = np.zeros(size)
    mu_star[0] = 1.0
    filled: dict[int, float] = {}
    for mask, ps in zip(sub_masks, sub_p):
        mu_sub = fwht(ps)
        for L in nonempty_submasks(mask):
            val = float(mu_sub[compress(L, mask)])
            if L in filled and abs(filled[L] - val) > 1e-9:
                raise SolverError(
                    INCONSISTENT_MARGINS,
                    "given margins disagree on a shared moment by "
                    f"{abs(filled[L] - val):.3e}",
                )
            filled[L] = val
            mu_star[L] = val

    theta = np.zeros(size)
    for L, v in eta_targets.items():
        theta[L] = v
    q = _probs_from_eta(theta)

    def moment_gap(qq: np.ndarray) -> float:
        mu = fwht(qq)
        return max((abs(float(mu[L] - mu_star[L])) for L in covered), default=0.0)

    maps = [compress_map(m, mask) for mask in sub_masks]
    for _ in range(ipf_sweeps if covered else 0):
        for mask, ps, cmap in zip(sub_masks, sub_p, maps):
            qs = marginal_array(q, m, mask)
            q = q * (ps / qs)[cmap]
            q /= q.sum()
        theta = fwht(np.log(q)) / size
        theta[0] = 0.0
        for L, v in eta_targets.items():
            theta[L] = v
        q = _probs_from_eta(theta)
        if moment_gap(q) < opts.tol * 1e-2:
            break

    if covered and moment_gap(q) >= opts.tol * 1e-2:
        cov = sorted(covered)
        for _ in range(newton_iters):
            mu = fwht(q)
            gvec = np.array([mu[L] - mu_star[L] for L in cov])
            if float(np.max(np.abs(gvec))) < 1e-13:
                break
            h = np.empty((len(cov), len(cov)))
            for a, La in enumerate(cov):
                for b, Lb in enumerate(cov):
                    h[a, b] = mu[La ^ Lb] - mu[La] * mu[Lb]
            try:
                step = np.linalg.solve(h, -gvec)
            except np.linalg.LinAlgError as exc:
                raise SolverError(
                    NON_CONVERGENCE, f"singular moment system: {exc}"
                ) from exc
            base = 0.5 * float(gvec @ gvec)
            scale = 1.0
            for _ in range(40):
                trial = theta.copy()
                for L, d in zip(cov, step):
                    trial[L] += scale * d
                q_try = _probs_from_eta(trial)
                mu_try = fwht(q_try)
                g_try = np.array([mu_try[L] - mu_star[L] for L in cov])
                if 0.5 * float(g_try @ g_try) <= base * (1 - 1e-4 * scale):
                    theta = trial
                    q = q_try
                    break
                scale *= 0.5
            else:
                raise SolverError(
                    NON_CONVERGENCE,
                    "moment-matching line search stalled (gap "
                    f"{float(np.max(np.abs(gvec))):.3e}); margins may be "
                    "inconsistent",
                )

    for mask, ps in zip(sub_masks, sub_p):
        qs = marginal_array(q, m, mask)
        if float(np.max(np.abs(qs - ps))) > 1e-10:
            raise SolverError(
                NON_CONVERGENCE,
                f"margin mismatch {float(np.max(np.abs(qs - ps))):.3e} "
                "after reconstruction",
            )
    theta_check = fwht(np.log(q)) / size
    for L, v in eta_targets.items():
        if abs(float(theta_check[L]) - v) > 1e-10:
            raise SolverError(
                NON_CONVERGENCE, "coefficient targets missed after reconstruction"
            )
    return JointTable(vars_m, q / q.sum())


# ---------------------------------------------------------------------------
# Hierarchical reconstruction
# ---------------------------------------------------------------------------

def invert_hierarchical(
    spec: MLLSpec, target: MLLVector, opts: SolveOptions = SolveOptions()
) -> SolveResult:
    """Rebuild the margins in a hierarchy witness order; each margin is the
    unique table matching its already-built sub-margins and the
    coefficients assigned to it."""
    if not spec.is_complete():
        raise StructureError("hierarchical inversion needs a complete spec")
    _check_target(spec, target)
    order = cls.hierarchy_order(spec)
    if order is None:
        raise StructureError("spec is not hierarchical")
    tmap = _target_dict(target)
    built: dict[int, JointTable] = {}
    for margin in order:
        vars_m = spec.vars.restrict(margin)
        inter = {e & margin for e in built if e & margin}
        maximal = [
            s for s in inter if not any(s != t and (s & ~t) == 0 for t in inter)
        ]
        subs = []
        for s in sorted(maximal):
            donor = next(e for e in built if (s & ~e) == 0)
            dt = built[donor]
            subs.append(marginalize(dt, dt.vars.mask_of(spec.vars.names_of(s))))
        eta_targets = {
            compress(e, margin): tmap[(e, m)]
            for e, m in spec.pairs
            if m == margin
        }
        built[margin] = reconstruct_mixed(vars_m, subs, eta_targets, opts)
    result = built[spec.vars.full_mask]
    res = _verify(spec, target, result.p, max(opts.tol, 1e-9))
    return SolveResult(result, len(order), res, "hierarchical")


# ---------------------------------------------------------------------------
# Markov-chain recovery for cyclic conditionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleChainSpec:
    """Cycle of conditional distributions over disjoint variable groups.

    ``conditionals[i]`` is p(x_{blocks[i+1]} | x_{blocks[i]}) for
    i = 0..k-2 and ``conditionals[k-1]`` is p(x_{blocks[0]} | x_{blocks[k-1]}).
    """

    vars: VarSet
    blocks: tuple[int, ...]
    conditionals: tuple[ConditionalTable, ...]

    def __post_init__(self) -> None:
        blocks = tuple(int(b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "conditionals", tuple(self.conditionals))
        if len(blocks) < 2:
            raise SpecError("a conditional cycle needs at least two blocks")
        union = 0
        for b in blocks:
            if b == 0 or (b & union) or (b & ~self.vars.full_mask):
                raise SpecError("blocks must be disjoint nonempty variable sets")
            union |= b
        if len(self.conditionals) != len(blocks):
            raise SpecError("need exactly one conditional per block transition")
        k = len(blocks)
        for i, cond in enumerate(self.conditionals):
            tgt = blocks[(i + 1) % k]
            giv = blocks[i]
            if set(cond.target) != set(self.vars.names_of(tgt)) or set(
                cond.given
            ) != set(self.vars.names_of(giv)):
                raise SpecError(
                    f"conditional {i} must map block {i} to block {(i + 1) % k}"
                )

    def to_json_obj(self) -> dict:
        return {
            "variables": list(self.vars.names),
            "blocks": [list(self.vars.names_of(b)) for b in self.blocks],
            "conditionals": [c.to_json_obj() for c in self.conditionals],
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "CycleChainSpec":
        vs = VarSet(tuple(obj["variables"]))
        blocks = tuple(vs.mask_of(b) for b in obj["blocks"])
        conds = tuple(ConditionalTable.from_json_obj(c) for c in obj["conditionals"])
        return CycleChainSpec(vs, blocks, conds)


def chain_from_joint(t: JointTable, blocks: Sequence[int]) -> CycleChainSpec:
    """Extract the cycle of conditionals of a joint table along the given
    disjoint blocks."""
    k = len(blocks)
    conds = tuple(condition(t, blocks[(i + 1) % k], blocks[i]) for i in range(k))
    return CycleChainSpec(t.vars, tuple(blocks), conds)


def _transition_matrix(chain: CycleChainSpec) -> np.ndarray:
    """Row-stochastic matrix on the first block's cells: one full trip
    around the cycle."""
    mat: np.ndarray | None = None
    for cond in chain.conditionals:
        step = cond.values.T  # rows: conditioning cell, cols: target cell
        mat = step if mat is None else mat @ step
    assert mat is not None
    return mat


def stationary(chain: CycleChainSpec) -> JointTable:
    """Unique stationary distribution of the cycle's transition matrix, by
    direct linear solve of (M^T - I) pi = 0 with a normalisation row."""
    m = _transition_matrix(chain)
    size = m.shape[0]
    a = m.T - np.eye(size)
    a[-1, :] = 1.0
    b = np.zeros(size)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(NON_CONVERGENCE, f"stationary solve failed: {exc}") from exc
    if np.any(pi <= 0):
        raise SolverError(
            NON_CONVERGENCE, "stationary solve produced non-positive entries"
        )
    if float(np.max(np.abs(pi @ m - pi))) > 1e-12:
        raise SolverError(NON_CONVERGENCE, "stationary vector fails invariance")
    vars_b = chain.vars.restrict(chain.blocks[0])
    return JointTable(vars_b, pi / pi.sum())


def stationary_power(
    chain: CycleChainSpec, tol: float = 1e-14, max_iter: int = 200000
) -> JointTable:
    """Power iteration on the same transition matrix; the direct solve is
    authoritative, this exists as an independent cross-check."""
    m = _transition_matrix(chain)
    size = m.shape[0]
    v = np.full(size, 1.0 / size)
    for _ in range(max_iter):
        nxt = v @ m
        nxt /= nxt.sum()
        if float(np.max(np.abs(nxt - v))) < tol:
            v = nxt
            break
        v = nxt
    vars_b = chain.vars.restrict(chain.blocks[0])
    return JointTable(vars_b, v / v.sum())


def invert_cyclic(
    spec: MLLSpec,
    target: MLLVector,
    opts: SolveOptions = SolveOptions(),
    blocks: tuple[int, ...] | None = None,
) -> SolveResult:
    """Invert a cyclic-conditional collection: build each block conditional
    from its margin parameters, recover the first block's marginal as the
    chain's stationary distribution, then finish hierarchically."""
    if blocks is None:
        params = cls.rule_applies(spec, "cyclic")
        if params is None:
            raise StructureError("spec does not have the cyclic block structure")
        blocks = params["blocks"]
    _check_target(spec, target)
    tmap = _target_dict(target)
    k = len(blocks)
    conds = []
    for i in range(k):
        tgt = blocks[(i + 1) % k]
        giv = blocks[i]
        margin = tgt | giv
        values = {e: tmap[(e, m)] for e, m in spec.pairs if m == margin}
        conds.append(_conditional_from_values(spec.vars, tgt, giv, values))
    chain = CycleChainSpec(spec.vars, tuple(blocks), tuple(conds))
    pi = stationary(chain)

    first = blocks[0]
    first_margin = blocks[-1] | first
    eta_pi = fwht(np.log(pi.p)) / pi.vars.n_cells
    new_pairs = []
    new_vals = []
    for e, m in spec.pairs:
        if m == first_margin and (e & ~first) == 0:
            new_pairs.append((e, first))
            new_vals.append(float(eta_pi[compress(e, first)]))
        else:
            new_pairs.append((e, m))
            new_vals.append(tmap[(e, m)])
    resolved = MLLSpec(spec.vars, tuple(new_pairs))
    sub = invert_hierarchical(resolved, MLLVector(resolved, np.array(new_vals)), opts)
    res = _verify(spec, target, sub.table.p, max(opts.tol, 1e-9))
    return SolveResult(sub.table, sub.iterations, res, "cyclic")


# ---------------------------------------------------------------------------
# Newton with analytic Jacobian
# ---------------------------------------------------------------------------

def invert_newton(
    spec: MLLSpec,
    target: MLLVector,
    opts: SolveOptions = SolveOptions(),
    init_eta: np.ndarray | None = None,
    max_iter: int = 200,
) -> SolveResult:
    """Newton iteration on F(eta) = lam(eta) - target with step-halving
    line search on the sup-norm of F."""
    if not spec.is_complete():
        raise StructureError("Newton inversion needs a complete spec")
    _check_target(spec, target)
    n = spec.vars.n
    size = spec.vars.n_cells
    eta = np.zeros(size) if init_eta is None else np.asarray(init_eta, float).copy()
    trace: list[float] = []
    p = _probs_from_eta(eta)
    fvec = lambda_array(p, n, spec) - target.values
    res = float(np.max(np.abs(fvec)))
    trace.append(res)
    for it in range(1, max_iter + 1):
        if res <= opts.tol:
            table = _finish_table(spec, p, trace)
            return SolveResult(table, it - 1, res, "newton", None, tuple(trace))
        jac = jacobian_array(p, n, spec)
        try:
            step = np.linalg.solve(jac, -fvec)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                NON_CONVERGENCE, f"singular Jacobian: {exc}", trace
            ) from exc
        scale = 1.0
        improved = False
        for _ in range(50):
            trial = eta.copy()
            trial[1:] += scale * step  # columns are the coefficient masks 1..
            try:
                p_try = _probs_from_eta(trial)
            except SolverError:
                scale *= 0.5
                continue
            f_try = lambda_array(p_try, n, spec) - target.values
            r_try = float(np.max(np.abs(f_try)))
            if r_try < res:
                eta, p, fvec, res = trial, p_try, f_try, r_try
                improved = True
                break
            scale *= 0.5
        trace.append(res)
        if not improved:
            raise SolverError(
                NON_CONVERGENCE, f"line search stalled at residual {res:.3e}", trace
            )
    raise SolverError(
        NON_CONVERGENCE,
        f"residual {res:.3e} above tol after {max_iter} Newton steps",
        trace,
    )


# ---------------------------------------------------------------------------
# Reduction replays
# ---------------------------------------------------------------------------

def _shrink_map(vars: VarSet, v_mask: int):
    keep = vars.full_mask & ~v_mask
    pos = bit_positions(keep)
    remap = {old: new for new, old in enumerate(pos)}

    def shrink(mask: int) -> int:
        out = 0
        for b in bit_positions(mask & keep):
            out |= 1 << remap[b]
        return out

    return shrink


def _glue_slices(
    vars: VarSet, v_mask: int, pv: np.ndarray, q0: JointTable, q1: JointTable
) -> np.ndarray:
    """p(x) = pv(x_v) * q_{x_v}(x_rest) over the cells of ``vars``."""
    keep = vars.full_mask & ~v_mask
    cmap = compress_map(vars.n, keep)
    vbit = (np.arange(vars.n_cells) >> bit_positions(v_mask)[0]) & 1
    p = np.where(vbit == 0, q0.p[cmap] * pv[0], q1.p[cmap] * pv[1])
    return p / p.sum()


def _apply_interchange_to_target(
    spec: MLLSpec, tmap: dict[Pair, float], effect: int, from_m: int, to_m: int
) -> tuple[MLLSpec, dict[Pair, float]]:
    """Rewrite one coordinate between margins using the margin-change term
    of the conditional pinned by the block parameters."""
    if (to_m & ~from_m) and (from_m & ~to_m):
        raise StructureError("interchange margins must be nested")
    down = (to_m & ~from_m) == 0  # moving into a smaller margin
    big = from_m if down else to_m
    small = to_m if down else from_m
    a_mask = big & ~small
    block = {
        e: tmap[(e, big)]
        for e in nonempty_submasks(big)
        if (e & a_mask) and (e, big) in tmap
    }
    want = {e for e in nonempty_submasks(big) if e & a_mask}
    if set(block) != want:
        raise StructureError("interchange block parameters are not all present")
    sub_vars = spec.vars.restrict(big)
    entries = {compress(e, big): val for e, val in block.items()}
    t_big = table_from_eta(eta_from_dict(sub_vars, entries))
    f = decompose_f(
        t_big, compress(effect, big), compress(small, big), compress(a_mask, big)
    )
    old = tmap.pop((effect, from_m))
    new_val = old - f if down else old + f
    new_spec = MLLSpec(
        spec.vars,
        tuple((e, to_m) if (e, m) == (effect, from_m) else (e, m)
              for e, m in spec.pairs),
    )
    tmap[(effect, to_m)] = new_val
    return new_spec, tmap


def _invert_variable_removal(
    spec: MLLSpec,
    tmap: dict[Pair, float],
    v_mask: int,
    opts: SolveOptions,
    depth: int,
) -> np.ndarray:
    """Split off the conditional of X_v given the rest (all effects
    containing v sit in the full margin), invert the reduced collection,
    and glue the conditional back on."""
    vars = spec.vars
    full = vars.full_mask
    rest = full & ~v_mask
    cond_vals = {e: tmap[(e, full)] for e, m in spec.pairs if e & v_mask}
    cond = _conditional_from_values(vars, v_mask, rest, cond_vals)
    # a table with that conditional and uniform rest pins the margin-change
    # terms of the full-margin effects not containing v
    t_pin = joint_from_conditional(
        vars, cond, table_from_eta(eta_from_dict(vars.restrict(rest), {}))
    )
    shrink = _shrink_map(vars, v_mask)
    red_pairs = []
    red_vals = []
    for e, m in spec.pairs:
        if e & v_mask:
            continue
        val = tmap[(e, m)]
        if m == full:
            val -= decompose_f(t_pin, e, rest, v_mask)
        red_pairs.append((shrink(e), shrink(m)))
        red_vals.append(val)
    reduced = MLLSpec(vars.restrict(rest), tuple(red_pairs))
    sub = _invert_auto(reduced, MLLVector(reduced, np.array(red_vals)), opts, depth + 1)
    return joint_from_conditional(vars, cond, sub.table).p


def _invert_slice_split(
    spec: MLLSpec,
    tmap: dict[Pair, float],
    v_mask: int,
    opts: SolveOptions,
    depth: int,
) -> np.ndarray:
    """Per-slice reduction: for each value of X_v the slice parameters are
    lam(A, M) +/- lam(A|v, M); invert both slices, then recover the X_v
    marginal from the effect {v} and its margin-change term."""
    vars = spec.vars
    shrink = _shrink_map(vars, v_mask)
    em = {e: m for e, m in spec.pairs}
    slices: list[JointTable] = []
    for xv in (0, 1):
        sign = -1.0 if xv else 1.0
        pairs = []
        vals = []
        for e, m in spec.pairs:
            if e & v_mask:
                continue
            kap = tmap[(e, m)] + sign * tmap[(e | v_mask, em[e | v_mask])]
            pairs.append((shrink(e), shrink(m & ~v_mask)))
            vals.append(kap)
        reduced = MLLSpec(vars.restrict(vars.full_mask & ~v_mask), tuple(pairs))
        sub = _invert_auto(reduced, MLLVector(reduced, np.array(vals)), opts, depth + 1)
        slices.append(sub.table)
    q0, q1 = slices
    margin_v = em[v_mask]
    n_margin = margin_v & ~v_mask
    half = _glue_slices(vars, v_mask, np.array([0.5, 0.5]), q0, q1)
    t_half = JointTable(vars, half)
    f = decompose_f(t_half, v_mask, v_mask, n_margin) if n_margin else 0.0
    eta_v = tmap[(v_mask, margin_v)] - f
    pv = np.exp([eta_v, -eta_v])
    pv /= pv.sum()
    return _glue_slices(vars, v_mask, pv, q0, q1)


def _invert_contraction(
    spec: MLLSpec,
    tmap: dict[Pair, float],
    relocate: tuple[Pair, ...],
    opts: SolveOptions,
    depth: int,
) -> np.ndarray:
    """Solve the self-contained subsystem for the relocated effects by the
    certified fixed point, then invert the relocated collection."""
    vars = spec.vars
    n = vars.n
    full = vars.full_mask
    eta = np.zeros(vars.n_cells)
    for e, m in spec.pairs:
        if m == full:
            eta[e] = tmap[(e, m)]
    trace: list[float] = []
    for _ in range(opts.max_iter):
        p = _probs_from_eta(eta)
        res = 0.0
        for e, m in relocate:
            lam_m = margin_lambda_array(p, n, m)
            delta = tmap[(e, m)] - float(lam_m[compress(e, m)])
            eta[e] += opts.damping * delta
            res = max(res, abs(delta))
        trace.append(res)
        if res <= opts.tol * 0.1:
            break
    else:
        raise SolverError(
            NON_CONVERGENCE, "subsystem fixed point did not converge", trace
        )
    relocated = cls.relocate_pairs(spec, relocate)
    new_tmap = dict(tmap)
    for e, m in relocate:
        new_tmap.pop((e, m))
        new_tmap[(e, full)] = float(eta[e])
    vals = np.array([new_tmap[pair] for pair in relocated.pairs])
    sub = _invert_auto(relocated, MLLVector(relocated, vals), opts, depth + 1)
    return sub.table.p


# ---------------------------------------------------------------------------
# Automatic dispatch
# ---------------------------------------------------------------------------

def _invert_via_report(
    spec: MLLSpec,
    target: MLLVector,
    report: cls.ClassificationReport,
    opts: SolveOptions,
    depth: int,
) -> SolveResult:
    cur_spec = spec
    tmap = _target_dict(target)
    method = ">".join(s.rule for s in report.rule_chain if s.rule != "interchange")
    for step in report.rule_chain:
        rule = step.rule
        if rule == "interchange":
            cur_spec, tmap = _apply_interchange_to_target(
                cur_spec,
                tmap,
                step.details["effect"],
                step.details["from_margin"],
                step.details["to_margin"],
            )
            continue
        cur_target = MLLVector(
            cur_spec, np.array([tmap[pair] for pair in cur_spec.pairs])
        )
        if rule == "hierarchical":
            sub = invert_hierarchical(cur_spec, cur_target, opts)
        elif rule in ("two_margin", "three_margin", "single_feedback"):
            sub = invert_fixed_point(cur_spec, cur_target, opts)
        elif rule == "nested":
            top = max(cur_spec.proper_margins, key=popcount, default=0)
            v = 1 << bit_positions(cur_spec.vars.full_mask & ~top)[0]
            p = _invert_variable_removal(cur_spec, dict(tmap), v, opts, depth)
            sub = SolveResult(JointTable(cur_spec.vars, p), 0, 0.0, "nested")
        elif rule == "variable_removal":
            p = _invert_variable_removal(cur_spec, dict(tmap), step.details["v"], opts, depth)
            sub = SolveResult(JointTable(cur_spec.vars, p), 0, 0.0, "variable_removal")
        elif rule in ("slice_split", "slice_split_general"):
            p = _invert_slice_split(cur_spec, dict(tmap), step.details["v"], opts, depth)
            sub = SolveResult(JointTable(cur_spec.vars, p), 0, 0.0, rule)
        elif rule == "cyclic":
            sub = invert_cyclic(cur_spec, cur_target, opts, blocks=step.details["blocks"])
        elif rule == cls.CONTRACTION_RULE:
            p = _invert_contraction(
                cur_spec, dict(tmap), step.details["relocate"], opts, depth
            )
            sub = SolveResult(JointTable(cur_spec.vars, p), 0, 0.0, rule)
        else:
            raise StructureError(f"no inversion route for rule {rule!r}")
        res = _verify(spec, target, sub.table.p, max(opts.tol, 1e-9))
        return SolveResult(
            JointTable(spec.vars, sub.table.p),
            sub.iterations,
            res,
            method,
            sub.contraction_certificate,
            sub.trace,
        )
    raise StructureError("classification chain carried no terminal rule")


def _invert_auto(
    spec: MLLSpec, target: MLLVector, opts: SolveOptions, depth: int = 0
) -> SolveResult:
    if depth > 20:
        raise SolverError(ALL_METHODS_FAILED, "reduction recursion too deep")
    report = cls.classify(spec)
    if report.verdict == cls.PROVEN_SMOOTH:
        return _invert_via_report(spec, target, report, opts, depth)
    if report.verdict == cls.NOT_SMOOTH_INCOMPLETE:
        raise StructureError("cannot invert an incomplete collection")

    failures: list[str] = []
    damped = SolveOptions(
        tol=opts.tol,
        max_iter=min(opts.max_iter, 2000),
        damping=opts.damping if opts.damping < 1 else 0.5,
        method=opts.method,
        seed=opts.seed,
    )
    try:
        sub = invert_fixed_point(spec, target, damped)
        return SolveResult(
            sub.table,
            sub.iterations,
            sub.final_residual,
            "fixed_point_damped",
            sub.contraction_certificate,
            sub.trace,
        )
    except (SolverError, StructureError) as exc:
        failures.append(f"fixed_point: {exc}")
    rng = np.random.default_rng(opts.seed)
    size = spec.vars.n_cells
    for attempt in range(6):
        init = (
            None
            if attempt == 0
            else np.concatenate(([0.0], rng.normal(0.0, 0.3, size - 1)))
        )
        try:
            return invert_newton(spec, target, opts, init_eta=init)
        except (SolverError, StructureError) as exc:
            failures.append(f"newton[{attempt}]: {exc}")
    raise SolverError(ALL_METHODS_FAILED, "; ".join(failures))


def invert(
    spec: MLLSpec, target: MLLVector, opts: SolveOptions = SolveOptions()
) -> SolveResult:
    """Invert a complete collection's parameter vector to its joint table.

    Method AUTO follows the classification chain (hierarchical margins,
    fixed point, variable/slice reductions, cyclic stationary recovery) and
    falls back to a damped fixed point plus multi-start Newton for
    collections without a proven route.  The other method values force one
    route and fail if its structural preconditions are unmet.
    """
    if not spec.is_complete():
        raise StructureError("inversion needs a complete collection")
    _check_target(spec, target)
    if opts.method == "AUTO":
        return _invert_auto(spec, target, opts)
    if opts.method == "FIXED_POINT":
        return invert_fixed_point(spec, target, opts)
    if opts.method == "HIERARCHICAL":
        return invert_hierarchical(spec, target, opts)
    if opts.method == "NEWTON":
        return invert_newton(spec, target, opts)
    if opts.method == "MARKOV":
        return invert_cyclic(spec, target, opts)
    raise SpecError(f"unsupported method {opts.method}")
