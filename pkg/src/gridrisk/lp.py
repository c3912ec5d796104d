"""Linear programs with frozen-basis solution sensitivities.

Solving is delegated to HiGHS (scipy.optimize.linprog); the derivative of the
optimal point with respect to tagged right-hand-side/bound parameters is
computed here from the active set, holding the basis fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

FEAS_TOL = 1e-8          # KKT / constraint residual tolerance
TIGHT_TOL = 1e-7         # activity detection
DUAL_TOL = 1e-9          # strongly-active threshold on multipliers
RANK_TOL = 1e-9

_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}

# Parameter tag kinds: which RHS/bound vector the parameter perturbs.
KIND_EQ = "eq"
KIND_IN = "in"
KIND_LO = "lo"
KIND_HI = "hi"


@dataclass
class LpProblem:
    """min c'x  s.t.  A_eq x = b_eq,  A_in x <= b_in,  lo <= x <= hi.

    `params` maps a parameter name to the RHS/bound coefficients it drives:
    a list of (kind, index, coeff) meaning d(b_kind[index])/d(param) = coeff.
    """

    c: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.a_in is None:
            self.a_in = np.zeros((0, n))
            self.b_in = np.zeros(0)
        else:
            self.a_in = np.atleast_2d(np.asarray(self.a_in, dtype=float))
            self.b_in = np.atleast_1d(np.asarray(self.b_in, dtype=float))
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)
        if self.a_eq.shape != (self.b_eq.size, n) or self.a_in.shape != (self.b_in.size, n):
            raise ValueError("inconsistent LP dimensions")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bound vectors must match the variable count")
        if np.any(self.lo > self.hi + FEAS_TOL):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LpSolution:
    """Solver outcome; duals follow scipy's convention (d objective / d RHS)."""

    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    objective: float | None = None
    eq_duals: np.ndarray | None = None
    in_duals: np.ndarray | None = None
    lo_duals: np.ndarray | None = None
    hi_duals: np.ndarray | None = None
    active_in: np.ndarray | None = None   # bool per inequality row
    active_lo: np.ndarray | None = None
    active_hi: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def active_signature(self) -> tuple:
        """Hashable fingerprint of the binding set (for perturbation checks)."""
        if not self.optimal:
            return (self.status,)
        return (
            tuple(np.flatnonzero(self.active_in).tolist()),
            tuple(np.flatnonzero(self.active_lo).tolist()),
            tuple(np.flatnonzero(self.active_hi).tolist()),
        )


_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}


def solve_lp(prob: LpProblem) -> LpSolution:
    """Solve with HiGHS dual simplex; statuses are reported, never raised."""
    res = linprog(
        c=prob.c,
        A_ub=prob.a_in if prob.b_in.size else None,
        b_ub=prob.b_in if prob.b_in.size else None,
        A_eq=prob.a_eq if prob.b_eq.size else None,
        b_eq=prob.b_eq if prob.b_eq.size else None,
        bounds=np.column_stack([prob.lo, prob.hi]),
        method="highs-ds",
        options=_HIGHS_OPTIONS,
    )
    status = _STATUS.get(res.status, "infeasible")
    if status != "optimal":
        return LpSolution(status=status)
    x = np.asarray(res.x, dtype=float)
    in_res = prob.b_in - prob.a_in @ x if prob.b_in.size else np.zeros(0)
    scale_in = 1.0 + np.abs(prob.b_in) if prob.b_in.size else np.zeros(0)
    active_in = in_res <= TIGHT_TOL * scale_in
    active_lo = np.isfinite(prob.lo) & (x - prob.lo <= TIGHT_TOL * (1.0 + np.abs(prob.lo)))
    active_hi = np.isfinite(prob.hi) & (prob.hi - x <= TIGHT_TOL * (1.0 + np.abs(prob.hi)))
    return LpSolution(
        status="optimal",
        x=x,
        objective=float(res.fun),
        eq_duals=np.asarray(res.eqlin.marginals, dtype=float) if prob.b_eq.size else np.zeros(0),
        in_duals=np.asarray(res.ineqlin.marginals, dtype=float) if prob.b_in.size else np.zeros(0),
        lo_duals=np.asarray(res.lower.marginals, dtype=float),
        hi_duals=np.asarray(res.upper.marginals, dtype=float),
        active_in=active_in,
        active_lo=active_lo,
        active_hi=active_hi,
    )


@dataclass
class SensitivityResult:
    """d(optimal x)/d(param) columns in `prob.params` order."""

    matrix: np.ndarray          # (n, n_params)
    param_names: list
    degenerate: bool
    param_degenerate: np.ndarray  # bool per param: tied to an ambiguous row


def _candidate_rows(prob: LpProblem, sol: LpSolution):
    """Active rows as (key, row_vector, strong) in basis-priority order."""
    n = prob.n
    cands = []
    for i in range(prob.b_eq.size):
        cands.append(((KIND_EQ, i), prob.a_eq[i], True))
    strong, weak = [], []
    for i in np.flatnonzero(sol.active_in):
        entry = ((KIND_IN, int(i)), prob.a_in[i], abs(sol.in_duals[i]) > DUAL_TOL)
        (strong if entry[2] else weak).append(entry)
    for j in np.flatnonzero(sol.active_lo):
        e = np.zeros(n)
        e[j] = 1.0
        entry = ((KIND_LO, int(j)), e, abs(sol.lo_duals[j]) > DUAL_TOL)
        (strong if entry[2] else weak).append(entry)
    for j in np.flatnonzero(sol.active_hi):
        e = np.zeros(n)
        e[j] = 1.0
        entry = ((KIND_HI, int(j)), e, abs(sol.hi_duals[j]) > DUAL_TOL)
        (strong if entry[2] else weak).append(entry)
    return cands + strong + weak


def solution_sensitivity(prob: LpProblem, sol: LpSolution) -> SensitivityResult:
    """Frozen-basis derivative of the optimal primal w.r.t. tagged parameters.

    The binding constraints are assembled into a square system in priority
    order (equalities, then nonzero-dual actives, then zero-dual actives);
    parameters whose rows do not enter the selected basis get zero columns.
    Ambiguity (a zero-dual row adding rank, redundant strong rows, or an
    under-determined optimal face) sets the degeneracy flag; the derivative of
    the basis actually selected is returned regardless.
    """
    if not sol.optimal:
        raise ValueError("sensitivity requires an optimal solution")
    n = prob.n
    names = list(prob.params.keys())
    n_par = len(names)

    q = np.zeros((n, 0))
    basis_rows: list = []
    basis_keys: dict = {}
    degenerate = False
    for key, a, strong in _candidate_rows(prob, sol):
        if len(basis_rows) == n:
            if strong:
                degenerate = True
            continue
        r = a - q @ (q.T @ a)
        r -= q @ (q.T @ r)  # second pass keeps q orthonormal at scale
        nr = float(np.linalg.norm(r))
        if nr > RANK_TOL * max(1.0, float(np.linalg.norm(a))):
            if not strong:
                degenerate = True  # a slack-dual row is needed to pin the point
            basis_keys[key] = len(basis_rows)
            basis_rows.append(a)
            q = np.hstack([q, (r / nr)[:, None]])
        elif strong and key[0] != KIND_EQ:
            degenerate = True  # redundant strongly-active row: multiple bases

    rank = len(basis_rows)
    if rank < n:
        # Optimal face has free directions; pin them (zero movement) and flag.
        degenerate = True
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            r = e - q @ (q.T @ e)
            nr = float(np.linalg.norm(r))
            if nr > RANK_TOL:
                basis_rows.append(e)
                q = np.hstack([q, (r / nr)[:, None]])
                if len(basis_rows) == n:
                    break

    a_basis = np.vstack(basis_rows) if basis_rows else np.zeros((0, n))
    rhs = np.zeros((n, n_par))
    param_deg = np.zeros(n_par, dtype=bool)
    tight_unselected = set()
    for i in range(prob.b_eq.size):
        if (KIND_EQ, i) not in basis_keys:
            tight_unselected.add((KIND_EQ, i))
    for i in np.flatnonzero(sol.active_in):
        if (KIND_IN, int(i)) not in basis_keys:
            tight_unselected.add((KIND_IN, int(i)))
    for j in np.flatnonzero(sol.active_lo):
        if (KIND_LO, int(j)) not in basis_keys:
            tight_unselected.add((KIND_LO, int(j)))
    for j in np.flatnonzero(sol.active_hi):
        if (KIND_HI, int(j)) not in basis_keys:
            tight_unselected.add((KIND_HI, int(j)))

    for p, name in enumerate(names):
        for kind, idx, coeff in prob.params[name]:
            key = (kind, int(idx))
            pos = basis_keys.get(key)
            if pos is not None:
                rhs[pos, p] += coeff
            elif key in tight_unselected:
                param_deg[p] = True  # tight but outside the chosen basis

    if n_par and np.any(rhs):
        lu, piv = scipy.linalg.lu_factor(a_basis)
        matrix = scipy.linalg.lu_solve((lu, piv), rhs)
    else:
        matrix = np.zeros((n, n_par))
    return SensitivityResult(
        matrix=matrix, param_names=names,
        degenerate=degenerate or bool(param_deg.any()),
        param_degenerate=param_deg,
    )


def kkt_residuals(prob: LpProblem, sol: LpSolution) -> dict:
    """Primal feasibility, complementary slackness and stationarity residuals."""
    x = sol.x
    out = {
        "eq": float(np.max(np.abs(prob.a_eq @ x - prob.b_eq))) if prob.b_eq.size else 0.0,
        "in": float(np.max(prob.a_in @ x - prob.b_in)) if prob.b_in.size else 0.0,
        "lo": float(np.max(np.where(np.isfinite(prob.lo), prob.lo - x, 0.0))),
        "hi": float(np.max(np.where(np.isfinite(prob.hi), x - prob.hi, 0.0))),
    }
    comp = 0.0
    if prob.b_in.size:
        comp = float(np.max(np.abs(sol.in_duals * (prob.b_in - prob.a_in @ x))))
    out["complementarity"] = comp
    # scipy marginals are d objective / d RHS; recover multipliers from them.
    grad = prob.c - (prob.a_eq.T @ sol.eq_duals if prob.b_eq.size else 0.0)
    if prob.b_in.size:
        grad = grad - prob.a_in.T @ sol.in_duals
    grad = grad - sol.lo_duals - sol.hi_duals
    out["stationarity"] = float(np.max(np.abs(grad)))
    return out


def dump_lp_text(prob: LpProblem, name: str = "problem") -> str:
    """Plain-text LP interchange dump for cross-checking with other solvers."""
    def term(coef, j):
        return f"{coef:+.12g} x{j}"

    lines = [f"\\ gridrisk debug dump: {name}", "Minimize", " obj: " + " ".join(
        term(c, j) for j, c in enumerate(prob.c) if c != 0.0
    )]
    lines.append("Subject To")
    for i in range(prob.b_eq.size):
        body = " ".join(term(v, j) for j, v in enumerate(prob.a_eq[i]) if v != 0.0)
        lines.append(f" eq{i}: {body} = {prob.b_eq[i]:.12g}")
    for i in range(prob.b_in.size):
        body = " ".join(term(v, j) for j, v in enumerate(prob.a_in[i]) if v != 0.0)
        lines.append(f" in{i}: {body} <= {prob.b_in[i]:.12g}")
    lines.append("Bounds")
    for j in range(prob.n):
        lo = "-inf" if not np.isfinite(prob.lo[j]) else f"{prob.lo[j]:.12g}"
        hi = "+inf" if not np.isfinite(prob.hi[j]) else f"{prob.hi[j]:.12g}"
        lines.append(f" {lo} <= x{j} <= {hi}")
    lines.append("End")
    return "\n".join(lines) + "\n"
