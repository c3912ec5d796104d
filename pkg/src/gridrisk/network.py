"""Grid data model: case files, topology/islanding, DC power flow, flow sensitivities.

Units are fixed throughout the package: power in MW, branch admittance in pu
on the case's MVA base, angles in rad, failure rates in 1/min, costs in $/MW.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

SCHEMA_VERSION = 1

# Default parameters used when a case file does not carry them (matpower files
# never do; native files may override per entity).
DEFAULT_FAILURE_RATE = {
    "lambda_0": 1e-4,
    "lambda_1": 1e-2,
    "knee": 0.6,
    "overload_slope": None,  # None -> continue the mid-segment slope
    "lambda_max": 0.05,
    "trip_factor": 1.2,
}
DEFAULT_COSTS = {"load_shed": 10000.0, "gen_adjust": 100.0}
DEFAULT_RAMP_FRACTION = 0.02   # MW/min as a fraction of P_max when unknown
DEFAULT_BRANCH_LIMIT = 1e4     # MW, for matpower rows with RATE_A == 0


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseSyntaxError(CaseError):
    """Malformed case text; carries the 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class CaseSemanticError(CaseError):
    """Structurally valid case with inconsistent content; names the entity."""

    def __init__(self, message: str, entity: str | None = None):
        super().__init__(message if entity is None else f"{message} [{entity}]")
        self.entity = entity


class PowerFlowError(RuntimeError):
    """Internal failure of the DC solver (singular island system)."""


@dataclass(frozen=True)
class FailureRateParams:
    """Piecewise-linear flow-dependent failure rate.

    lam(rho) with rho = |F|/F_max:
      rho <= knee:      lam_0
      knee < rho <= 1:  lam_0 + (rho-knee)/(1-knee) * (lam_1-lam_0)
      rho > 1:          min(lam_1 + slope*(rho-1), lam_max)
    Continuous and nondecreasing by construction.
    """

    lam0: float
    lam1: float
    knee: float
    slope: float
    lam_max: float

    def validate(self, entity: str) -> None:
        if not (0.0 <= self.lam0 <= self.lam1 <= self.lam_max):
            raise CaseSemanticError(
                "failure rates must satisfy 0 <= lambda_0 <= lambda_1 <= lambda_max", entity
            )
        if not (0.0 < self.knee < 1.0):
            raise CaseSemanticError("failure-rate knee must lie in (0, 1)", entity)
        if self.slope < 0.0:
            raise CaseSemanticError("overload slope must be >= 0", entity)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: int = 1  # matpower-style type flag (1 PQ, 2 PV, 3 ref); informational


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    y: float           # pu susceptance magnitude (1/x)
    f_max: float       # MW continuous limit
    trip_factor: float # instantaneous trip above trip_factor * f_max
    rate: FailureRateParams


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p: float      # MW base-case setpoint
    p_min: float
    p_max: float
    ramp: float   # MW/min
    cost: float   # $/MW adjustment


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p: float      # MW base demand
    cost: float   # $/MW shed


@dataclass(frozen=True)
class SystemState:
    """Dispatch state x = [P_d; P_g] in MW."""

    p_load: np.ndarray
    p_gen: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_load", np.asarray(self.p_load, dtype=float))
        object.__setattr__(self, "p_gen", np.asarray(self.p_gen, dtype=float))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.p_load, self.p_gen])

    @staticmethod
    def from_x(x: np.ndarray, n_load: int) -> "SystemState":
        x = np.asarray(x, dtype=float)
        return SystemState(x[:n_load].copy(), x[n_load:].copy())

    def total_load(self) -> float:
        return float(self.p_load.sum())


class NetworkCase:
    """Validated grid description with precomputed index arrays.

    Immutable by convention; derived per-topology factorizations are cached on
    the instance (idempotent writes, safe to share read-only across tasks).
    """

    def __init__(self, base_mva: float, buses, branches, generators, loads):
        self.base_mva = float(base_mva)
        self.buses = tuple(buses)
        self.branches = tuple(branches)
        self.generators = tuple(generators)
        self.loads = tuple(loads)
        self._validate()

        self.n_bus = len(self.buses)
        self.n_branch = len(self.branches)
        self.n_load = len(self.loads)
        self.n_gen = len(self.generators)
        self.n_x = self.n_load + self.n_gen

        self.bus_pos = {b.id: i for i, b in enumerate(self.buses)}
        self.branch_pos = {br.id: i for i, br in enumerate(self.branches)}
        self.branch_from = np.array([self.bus_pos[b.from_bus] for b in self.branches], dtype=int)
        self.branch_to = np.array([self.bus_pos[b.to_bus] for b in self.branches], dtype=int)
        self.branch_y = np.array([b.y for b in self.branches])
        self.f_max = np.array([b.f_max for b in self.branches])
        self.trip_factor = np.array([b.trip_factor for b in self.branches])
        self.lam0 = np.array([b.rate.lam0 for b in self.branches])
        self.lam1 = np.array([b.rate.lam1 for b in self.branches])
        self.knee = np.array([b.rate.knee for b in self.branches])
        self.over_slope = np.array([b.rate.slope for b in self.branches])
        self.lam_max = np.array([b.rate.lam_max for b in self.branches])
        self.load_bus = np.array([self.bus_pos[l.bus] for l in self.loads], dtype=int)
        self.gen_bus = np.array([self.bus_pos[g.bus] for g in self.generators], dtype=int)
        self.c_load = np.array([l.cost for l in self.loads])
        self.c_gen = np.array([g.cost for g in self.generators])
        self.p_load0 = np.array([l.p for l in self.loads])
        self.p_gen0 = np.array([g.p for g in self.generators])
        self.gen_min = np.array([g.p_min for g in self.generators])
        self.gen_max = np.array([g.p_max for g in self.generators])
        self.gen_ramp = np.array([g.ramp for g in self.generators])
        self._topo_cache: dict[frozenset, dict] = {}

    def _validate(self) -> None:
        bus_ids = {b.id for b in self.buses}
        if len(bus_ids) != len(self.buses):
            raise CaseSemanticError("duplicate bus id")
        seen = set()
        for br in self.branches:
            if br.id in seen:
                raise CaseSemanticError("duplicate branch id", f"branch {br.id}")
            seen.add(br.id)
            for end in (br.from_bus, br.to_bus):
                if end not in bus_ids:
                    raise CaseSemanticError(
                        f"branch endpoint references unknown bus {end}", f"branch {br.id}"
                    )
            if br.f_max <= 0:
                raise CaseSemanticError("branch flow limit must be > 0", f"branch {br.id}")
            if br.y <= 0:
                raise CaseSemanticError("branch admittance must be > 0", f"branch {br.id}")
            if br.trip_factor < 1.0:
                raise CaseSemanticError("trip factor must be >= 1", f"branch {br.id}")
            br.rate.validate(f"branch {br.id}")
        for g in self.generators:
            if g.bus not in bus_ids:
                raise CaseSemanticError(f"generator references unknown bus {g.bus}", f"gen {g.id}")
            if g.p_min > g.p_max:
                raise CaseSemanticError("generator P_min > P_max", f"gen {g.id}")
            if g.ramp < 0 or g.cost < 0:
                raise CaseSemanticError("generator ramp/cost must be >= 0", f"gen {g.id}")
        for l in self.loads:
            if l.bus not in bus_ids:
                raise CaseSemanticError(f"load references unknown bus {l.bus}", f"load {l.id}")
            if l.p < 0 or l.cost < 0:
                raise CaseSemanticError("load demand/cost must be >= 0", f"load {l.id}")

    def base_state(self) -> SystemState:
        return SystemState(self.p_load0.copy(), self.p_gen0.copy())

    def state_names(self) -> list[str]:
        """One name per state-vector entry, loads first then generators."""
        names = [f"load{l.id}@bus{l.bus}" for l in self.loads]
        names += [f"gen{g.id}@bus{g.bus}" for g in self.generators]
        return names

    def state_buses(self) -> list[int]:
        return [l.bus for l in self.loads] + [g.bus for g in self.generators]


@dataclass(frozen=True)
class Topology:
    """In-service branch set with its island decomposition.

    islands are tuples of bus positions; an island is energized when it
    contains at least one generator bus, and then carries a reference bus
    (the generator bus with the lowest id).
    """

    in_service: frozenset
    islands: tuple
    island_of_bus: tuple
    ref_bus: tuple        # bus position per island (-1 when de-energized)
    energized: tuple      # bool per island


def build_topology(case: NetworkCase, removed: frozenset = frozenset()) -> Topology:
    """Island decomposition of the network without `removed` branches.

    Reference bus per energized island: the generator bus with the lowest bus
    id (choice does not affect flows).
    """
    in_service = frozenset(br.id for br in case.branches) - frozenset(removed)
    rows, cols = [], []
    for br in case.branches:
        if br.id in in_service:
            rows.append(case.bus_pos[br.from_bus])
            cols.append(case.bus_pos[br.to_bus])
    adj = coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(case.n_bus, case.n_bus)
    )
    n_isl, labels = connected_components(adj, directed=False)
    islands = tuple(
        tuple(np.flatnonzero(labels == k).tolist()) for k in range(n_isl)
    )
    gen_buses = set(case.gen_bus.tolist())
    ref, energized = [], []
    for members in islands:
        gens_here = [p for p in members if p in gen_buses]
        if gens_here:
            ref.append(min(gens_here, key=lambda p: case.buses[p].id))
            energized.append(True)
        else:
            ref.append(-1)
            energized.append(False)
    return Topology(
        in_service=in_service,
        islands=islands,
        island_of_bus=tuple(int(v) for v in labels),
        ref_bus=tuple(ref),
        energized=tuple(energized),
    )


def apply_outage(case: NetworkCase, topo: Topology, branch_ids) -> tuple[Topology, frozenset]:
    """Remove branches and recompute islands.

    Returns the new topology and the subset of requested ids that were
    already out of service (no-op entries, flagged for the caller).
    """
    requested = frozenset(branch_ids)
    for bid in requested:
        if bid not in case.branch_pos:
            raise CaseSemanticError(f"unknown branch id {bid}", f"branch {bid}")
    already_out = requested - topo.in_service
    effective = requested & topo.in_service
    if not effective:
        return topo, already_out
    removed = frozenset(br.id for br in case.branches) - topo.in_service | effective
    return build_topology(case, removed), already_out


def _topology_data(case: NetworkCase, topo: Topology) -> dict:
    """Per-topology factorizations and the flow sensitivity matrix (cached)."""
    cached = case._topo_cache.get(topo.in_service)
    if cached is not None:
        return cached

    n_bus = case.n_bus
    b_mat = np.zeros((n_bus, n_bus))
    for i, br in enumerate(case.branches):
        if br.id not in topo.in_service:
            continue
        u, v = case.branch_from[i], case.branch_to[i]
        b_mat[u, u] += br.y
        b_mat[v, v] += br.y
        b_mat[u, v] -= br.y
        b_mat[v, u] -= br.y

    # theta = inv_map @ injections(pu), zero row/col at each reference bus
    inv_map = np.zeros((n_bus, n_bus))
    for k, members in enumerate(topo.islands):
        if not topo.energized[k] or len(members) == 1:
            continue
        keep = [p for p in members if p != topo.ref_bus[k]]
        sub = b_mat[np.ix_(keep, keep)]
        try:
            sub_inv = scipy.linalg.inv(sub)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover - guarded by connectivity
            raise PowerFlowError(f"singular island system (island {k})") from exc
        inv_map[np.ix_(keep, keep)] = sub_inv

    # branch-flow rows: F_pu = y_i * (theta_u - theta_v)
    flow_rows = np.zeros((case.n_branch, n_bus))
    for i, br in enumerate(case.branches):
        if br.id not in topo.in_service:
            continue
        k = topo.island_of_bus[case.branch_from[i]]
        if not topo.energized[k]:
            continue
        flow_rows[i] = br.y * (inv_map[case.branch_from[i]] - inv_map[case.branch_to[i]])

    # injection-to-state mapping: load columns negative, generator columns positive
    sens = np.zeros((case.n_branch, case.n_x))
    sens[:, : case.n_load] = -flow_rows[:, case.load_bus]
    sens[:, case.n_load :] = flow_rows[:, case.gen_bus]

    data = {"inv_map": inv_map, "flow_sens": sens}
    case._topo_cache[topo.in_service] = data
    return data


@dataclass(frozen=True)
class FlowResult:
    flows: np.ndarray   # MW per branch (0 for out-of-service / de-energized)
    angles: np.ndarray  # rad per bus (0 at references and de-energized buses)


def dc_power_flow(case: NetworkCase, topo: Topology, state: SystemState) -> FlowResult:
    """Solve the reduced susceptance system per energized island.

    Injections must balance per island (enforced upstream by dispatch); any
    residual lands on the island reference. De-energized islands report zero
    flows and angles.
    """
    data = _topology_data(case, topo)
    inj = np.zeros(case.n_bus)
    np.add.at(inj, case.gen_bus, state.p_gen)
    np.add.at(inj, case.load_bus, -state.p_load)
    inj /= case.base_mva
    angles = data["inv_map"] @ inj
    flows_pu = np.zeros(case.n_branch)
    for i, br in enumerate(case.branches):
        if br.id in topo.in_service:
            k = topo.island_of_bus[case.branch_from[i]]
            if topo.energized[k]:
                flows_pu[i] = br.y * (angles[case.branch_from[i]] - angles[case.branch_to[i]])
    return FlowResult(flows=flows_pu * case.base_mva, angles=angles)


def flow_sensitivity(case: NetworkCase, topo: Topology) -> np.ndarray:
    """d(branch flows, MW)/d([P_d; P_g], MW) for the fixed topology.

    Injection-shift factors computed per island against the island reference;
    rows of out-of-service branches and branches in de-energized islands are
    zero. Load columns carry a negative injection sign.
    """
    return _topology_data(case, topo)["flow_sens"].copy()


# ---------------------------------------------------------------------------
# Case parsing
# ---------------------------------------------------------------------------

def _rate_from_dict(d: dict, defaults: dict, entity: str) -> FailureRateParams:
    merged = dict(defaults)
    merged.update({k: v for k, v in d.items() if v is not None})
    lam0 = float(merged["lambda_0"])
    lam1 = float(merged["lambda_1"])
    knee = float(merged["knee"])
    slope = merged.get("overload_slope")
    if slope is None:
        slope = (lam1 - lam0) / max(1.0 - knee, 1e-12)
    params = FailureRateParams(
        lam0=lam0, lam1=lam1, knee=knee, slope=float(slope),
        lam_max=float(merged["lambda_max"]),
    )
    params.validate(entity)
    return params


def _parse_native_json(text: str) -> NetworkCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise CaseSyntaxError("top-level JSON value must be an object", 1, 1)
    for key in ("base_mva", "buses", "branches", "generators", "loads"):
        if key not in doc:
            raise CaseSemanticError(f"missing top-level key '{key}'")

    fr_defaults = dict(DEFAULT_FAILURE_RATE)
    fr_defaults.update(doc.get("failure_rate", {}))
    cost_defaults = dict(DEFAULT_COSTS)
    cost_defaults.update(doc.get("costs", {}))
    trip_default = float(fr_defaults.get("trip_factor", DEFAULT_FAILURE_RATE["trip_factor"]))

    buses = [Bus(id=int(b["id"]), kind=int(b.get("kind", 1))) for b in doc["buses"]]
    branches = []
    for row in doc["branches"]:
        bid = int(row["id"])
        rate = _rate_from_dict(row, fr_defaults, f"branch {bid}")
        branches.append(
            Branch(
                id=bid,
                from_bus=int(row["from"]),
                to_bus=int(row["to"]),
                y=float(row["y"]),
                f_max=float(row["f_max"]),
                trip_factor=float(row.get("trip_factor", trip_default)),
                rate=rate,
            )
        )
    gens = [
        Generator(
            id=int(g["id"]),
            bus=int(g["bus"]),
            p=float(g.get("p", 0.0)),
            p_min=float(g.get("p_min", 0.0)),
            p_max=float(g["p_max"]),
            ramp=float(g["ramp"]),
            cost=float(g.get("cost", cost_defaults["gen_adjust"])),
        )
        for g in doc["generators"]
    ]
    loads = [
        Load(
            id=int(l["id"]),
            bus=int(l["bus"]),
            p=float(l["p"]),
            cost=float(l.get("cost", cost_defaults["load_shed"])),
        )
        for l in doc["loads"]
    ]
    return NetworkCase(doc["base_mva"], buses, branches, gens, loads)


_MP_NUM = re.compile(r"[-+0-9.eE]+")


def _matpower_block(text: str, name: str) -> tuple[list[list[float]], int]:
    """Extract `mpc.<name> = [...];` as rows of floats; returns start line."""
    m = re.search(rf"mpc\.{name}\s*=\s*\[", text)
    if m is None:
        raise CaseSyntaxError(f"matrix mpc.{name} not found", 1, 1)
    start = m.end()
    end = text.find("]", start)
    if end < 0:
        line = text.count("\n", 0, start) + 1
        raise CaseSyntaxError(f"unterminated mpc.{name} matrix", line, 1)
    body = text[start:end]
    base_line = text.count("\n", 0, start) + 1
    rows = []
    for off, raw in enumerate(body.split("\n")):
        stripped = raw.split("%", 1)[0].strip().rstrip(";").strip()
        if not stripped:
            continue
        vals = []
        for tok in stripped.split():
            if not _MP_NUM.fullmatch(tok):
                col = raw.index(tok) + 1
                raise CaseSyntaxError(
                    f"invalid numeric token '{tok}' in mpc.{name}", base_line + off, col
                )
            vals.append(float(tok))
        rows.append(vals)
    return rows, base_line


def _parse_matpower(text: str, defaults: dict | None = None) -> NetworkCase:
    """Read mpc.baseMVA / mpc.bus / mpc.gen / mpc.branch from matpower text.

    Failure-rate and cost parameters are not carried by the format: they come
    from `defaults` (keys: failure_rate, costs, ramp_fraction, branch_limit).
    """
    defaults = defaults or {}
    fr_defaults = dict(DEFAULT_FAILURE_RATE)
    fr_defaults.update(defaults.get("failure_rate", {}))
    cost_defaults = dict(DEFAULT_COSTS)
    cost_defaults.update(defaults.get("costs", {}))
    ramp_fraction = float(defaults.get("ramp_fraction", DEFAULT_RAMP_FRACTION))
    branch_limit = float(defaults.get("branch_limit", DEFAULT_BRANCH_LIMIT))
    trip_default = float(fr_defaults.get("trip_factor", DEFAULT_FAILURE_RATE["trip_factor"]))

    m = re.search(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;", text)
    if m is None:
        raise CaseSyntaxError("mpc.baseMVA assignment not found", 1, 1)
    base_mva = float(m.group(1))

    bus_rows, bus_line = _matpower_block(text, "bus")
    gen_rows, gen_line = _matpower_block(text, "gen")
    br_rows, br_line = _matpower_block(text, "branch")

    buses, loads = [], []
    for off, row in enumerate(bus_rows):
        if len(row) < 13:
            raise CaseSyntaxError("bus row needs 13 columns", bus_line + off, 1)
        bid = int(row[0])
        buses.append(Bus(id=bid, kind=int(row[1])))
        if row[2] != 0.0:
            loads.append(
                Load(id=len(loads) + 1, bus=bid, p=row[2], cost=cost_defaults["load_shed"])
            )
    bus_ids = {b.id for b in buses}

    gens = []
    for off, row in enumerate(gen_rows):
        if len(row) < 10:
            raise CaseSyntaxError("gen row needs 10 columns", gen_line + off, 1)
        bus, pg, status, pmax, pmin = int(row[0]), row[1], row[7], row[8], row[9]
        if status <= 0 or pmax <= 0:
            continue  # offline units and synchronous condensers
        if bus not in bus_ids:
            raise CaseSemanticError(f"generator references unknown bus {bus}", f"gen row {off + 1}")
        ramp = row[16] if len(row) >= 17 and row[16] > 0 else max(1.0, ramp_fraction * pmax)
        gens.append(
            Generator(
                id=len(gens) + 1, bus=bus, p=pg, p_min=pmin, p_max=pmax,
                ramp=ramp, cost=cost_defaults["gen_adjust"],
            )
        )

    branches = []
    for off, row in enumerate(br_rows):
        if len(row) < 11:
            raise CaseSyntaxError("branch row needs 11 columns", br_line + off, 1)
        f_bus, t_bus, x, rate_a, status = int(row[0]), int(row[1]), row[3], row[5], row[10]
        if status <= 0:
            continue
        bid = len(branches) + 1
        for end in (f_bus, t_bus):
            if end not in bus_ids:
                raise CaseSemanticError(
                    f"branch endpoint references unknown bus {end}", f"branch row {off + 1}"
                )
        if x <= 0:
            raise CaseSemanticError("branch reactance must be > 0", f"branch row {off + 1}")
        branches.append(
            Branch(
                id=bid, from_bus=f_bus, to_bus=t_bus, y=1.0 / x,
                f_max=rate_a if rate_a > 0 else branch_limit,
                trip_factor=trip_default,
                rate=_rate_from_dict({}, fr_defaults, f"branch {bid}"),
            )
        )
    return NetworkCase(base_mva, buses, branches, gens, loads)


def parse_case(text: str, fmt: str = "native-json", defaults: dict | None = None) -> NetworkCase:
    """Parse a case file body in the given format.

    fmt: "native-json" (full schema) or "matpower-text" (bus/gen/branch/baseMVA
    only; failure-rate and cost parameters from `defaults`).
    """
    if not text or not text.strip():
        raise CaseSyntaxError("empty case text", 1, 1)
    if fmt == "native-json":
        return _parse_native_json(text)
    if fmt == "matpower-text":
        return _parse_matpower(text, defaults)
    raise ValueError(f"unknown case format '{fmt}'")


def serialize_case(case: NetworkCase) -> str:
    """Resolved native-JSON form; parse(serialize(parse(t))) == parse(t)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "kind": b.kind} for b in case.buses],
        "branches": [
            {
                "id": br.id, "from": br.from_bus, "to": br.to_bus, "y": br.y,
                "f_max": br.f_max, "trip_factor": br.trip_factor,
                "lambda_0": br.rate.lam0, "lambda_1": br.rate.lam1,
                "knee": br.rate.knee, "overload_slope": br.rate.slope,
                "lambda_max": br.rate.lam_max,
            }
            for br in case.branches
        ],
        "generators": [
            {
                "id": g.id, "bus": g.bus, "p": g.p, "p_min": g.p_min,
                "p_max": g.p_max, "ramp": g.ramp, "cost": g.cost,
            }
            for g in case.generators
        ],
        "loads": [
            {"id": l.id, "bus": l.bus, "p": l.p, "cost": l.cost} for l in case.loads
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def case_equal(a: NetworkCase, b: NetworkCase) -> bool:
    """Structural equality of two cases (used by round-trip tests)."""
    return (
        a.base_mva == b.base_mva
        and a.buses == b.buses
        and a.branches == b.branches
        and a.generators == b.generators
        and a.loads == b.loads
    )


def with_failure_rate(case: NetworkCase, **overrides) -> NetworkCase:
    """Copy of the case with failure-rate parameters replaced on every branch.

    Accepts the native-schema keys (lambda_0, lambda_1, knee, overload_slope,
    lambda_max, trip_factor).
    """
    trip = overrides.pop("trip_factor", None)
    branches = []
    for br in case.branches:
        current = {
            "lambda_0": br.rate.lam0, "lambda_1": br.rate.lam1, "knee": br.rate.knee,
            "overload_slope": br.rate.slope, "lambda_max": br.rate.lam_max,
        }
        current.update(overrides)
        rate = _rate_from_dict({}, current, f"branch {br.id}")
        branches.append(
            replace(br, rate=rate, trip_factor=br.trip_factor if trip is None else float(trip))
        )
    return NetworkCase(case.base_mva, case.buses, branches, case.generators, case.loads)
