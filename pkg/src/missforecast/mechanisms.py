"""Classification of finite discrete joints against missingness mechanisms.

A joint distribution over predictors, outcome and their missingness
indicators is checked against six mechanism definitions (MCAR, MAR,
MARX-YM, MARX-YO, NIMO, NICO), each expressed as a conjunction of
value-specific conditional independence statements:

    A=a independent of B given C  <=>  Pr(a | b, c) = Pr(a | c)
    for every (b, c) cell with Pr(b, c) > 0.

Flags are three-valued: ``holds`` / ``fails`` (with a witness cell) /
``undefined`` when the defining condition only involves zero-probability
events (e.g. the outcome is never missing, or no fully-observed pattern
exists). Implication checking treats ``undefined`` as non-falsifying: an
implication edge is violated only when the antecedent holds and the
consequent fails.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_TOL = 1e-9

FLAG_NAMES = ("MCAR", "MAR", "MARX_YM", "MARX_YO", "NIMO", "NICO")

# implication lattice: (antecedents..., consequent)
LATTICE_EDGES = (
    (("MCAR",), "MAR"),
    (("MCAR",), "MARX_YM"),
    (("MAR",), "MARX_YO"),
    (("MARX_YM",), "MARX_YO"),
    (("MARX_YM",), "NIMO"),
    (("NIMO",), "NICO"),
    (("NIMO", "MARX_YO"), "MARX_YM"),
)


@dataclass(frozen=True)
class Variable:
    name: str
    levels: tuple


@dataclass(frozen=True)
class DiscreteJoint:
    """Probability table over predictors, outcome and missingness indicators."""

    variables: tuple[Variable, ...]
    probs: np.ndarray
    predictors: tuple[str, ...]
    outcome: str
    indicators: dict[str, str]  # predictor/outcome name -> its indicator name

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate variable names: {names}")
        probs = np.array(self.probs, dtype=float)
        shape = tuple(len(v.levels) for v in self.variables)
        if probs.shape != shape:
            raise InputError(f"table shape {probs.shape} != domain shape {shape}")
        if (probs < 0).any():
            raise InputError("negative probability mass")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise InputError(f"probability mass sums to {total!r}, not 1")
        for name in (*self.predictors, self.outcome):
            if name not in names:
                raise InputError(f"unknown variable {name!r}")
            ind = self.indicators.get(name)
            if ind is None or ind not in names:
                raise InputError(f"{name!r} lacks a missingness indicator")
            if tuple(self.variables[names.index(ind)].levels) != (0, 1):
                raise InputError(f"indicator {ind!r} must have domain (0, 1)")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "indicators", dict(self.indicators))

    # -- lookups -------------------------------------------------------------

    def axis(self, name: str) -> int:
        for k, v in enumerate(self.variables):
            if v.name == name:
                return k
        raise InputError(f"unknown variable {name!r}")

    def variable(self, name: str) -> Variable:
        return self.variables[self.axis(name)]

    def level_index(self, name: str, value) -> int:
        levels = self.variable(name).levels
        try:
            return levels.index(value)
        except ValueError:
            raise InputError(f"{value!r} not in domain of {name!r}: {levels}") from None

    def marginal(self, names, event: dict | None = None) -> np.ndarray:
        """Marginal table over ``names`` (in that axis order) after slicing
        the ``event`` variables."""
        return _marginal_ordered(self, list(names), event)

    def event_mass(self, event: dict) -> float:
        return float(self.marginal((), event))

    def cond_prob(self, target: dict, given: dict) -> float:
        denom = self.event_mass(given)
        if denom <= 0.0:
            raise InputError(f"conditioning event has zero probability: {given}")
        return self.event_mass({**target, **given}) / denom


def _marginal_ordered(joint: DiscreteJoint, names: list[str], event: dict | None) -> np.ndarray:
    """Marginal over ``names`` with axes in exactly that order."""
    event = event or {}
    idx = [slice(None)] * joint.probs.ndim
    for var, val in event.items():
        idx[joint.axis(var)] = joint.level_index(var, val)
    sliced = joint.probs[tuple(idx)]
    remaining = [v.name for v in joint.variables if v.name not in event]
    drop = tuple(k for k, n in enumerate(remaining) if n not in names)
    out = sliced.sum(axis=drop) if drop else sliced
    kept = [n for n in remaining if n in names]
    perm = [kept.index(n) for n in names]
    return out.transpose(perm) if perm else out


@dataclass(frozen=True)
class CheckResult:
    status: str                 # "holds" | "fails"
    max_gap: float
    witness: dict | None = None

    @property
    def holds(self) -> bool:
        return self.status == "holds"


def check_ci(joint: DiscreteJoint, a, b, c, tol: float = DEFAULT_TOL,
             min_mass: float = 0.0) -> CheckResult:
    """Value-specific conditional independence check on an exact table.

    ``a`` is either a variable name (checked for every level) or an event
    mapping variables to values. Conditioning cells with zero mass are
    skipped; ``min_mass`` widens that exclusion for empirical tables whose
    rare cells carry mostly sampling noise. The witness of a failure is the
    first violating cell in row-major order over the (b, c) domains.
    """
    if tol <= 0:
        raise InputError("tol must be > 0")
    b = list(b)
    c = list(c)
    if isinstance(a, str):
        events = [{a: lvl} for lvl in joint.variable(a).levels]
    else:
        events = [dict(a)]
    for event in events:
        for var in event:
            joint.axis(var)
            if var in b or var in c:
                raise InputError(f"event variable {var!r} also appears in b/c")
    for var in (*b, *c):
        joint.axis(var)
    if set(b) & set(c):
        raise InputError("b and c overlap")

    worst_gap = 0.0
    if not b:
        return CheckResult("holds", 0.0)
    p_bc = _marginal_ordered(joint, b + c, None)
    p_c = _marginal_ordered(joint, c, None) if c else np.array(1.0)

    for event in events:
        p_abc = _marginal_ordered(joint, b + c, event)
        p_ac = _marginal_ordered(joint, c, event) if c else np.array(joint.event_mass(event))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.where(p_bc > 0, p_abc / np.where(p_bc > 0, p_bc, 1.0), np.nan)
            rhs_c = np.where(p_c > 0, p_ac / np.where(p_c > 0, p_c, 1.0), np.nan)
        rhs = np.broadcast_to(rhs_c.reshape((1,) * len(b) + rhs_c.shape), lhs.shape) \
            if c else np.broadcast_to(rhs_c, lhs.shape)
        gap = np.abs(lhs - rhs)
        gap = np.where(np.asarray(p_bc) > max(min_mass, 0.0), gap, 0.0)
        worst_gap = max(worst_gap, float(np.nanmax(gap)) if gap.size else 0.0)
        bad = np.argwhere(gap > tol)
        if bad.size:
            cell = tuple(int(k) for k in bad[0])
            assign = {}
            for pos, name in enumerate(b + c):
                assign[name] = joint.variable(name).levels[cell[pos]]
            return CheckResult(
                "fails",
                worst_gap,
                witness={
                    "event": event,
                    "cell": assign,
                    "p_given_bc": float(np.asarray(lhs)[cell]),
                    "p_given_c": float(np.asarray(rhs)[cell]),
                },
            )
    return CheckResult("holds", worst_gap)


# ---------------------------------------------------------------------------
# Mechanism flags
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlagResult:
    status: str                        # "holds" | "fails" | "undefined"
    witness: dict | None = None
    max_gap: float = 0.0
    note: str = ""

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    @property
    def fails(self) -> bool:
        return self.status == "fails"


@dataclass(frozen=True)
class MechanismReport:
    flags: dict[str, FlagResult]
    tol: float

    def __getitem__(self, name: str) -> FlagResult:
        return self.flags[name]

    def status(self, name: str) -> str:
        return self.flags[name].status

    def as_text(self) -> str:
        lines = []
        width = max(len(n) for n in FLAG_NAMES)
        for name in FLAG_NAMES:
            flag = self.flags[name]
            line = f"{name:<{width}}  {flag.status}"
            if flag.fails and flag.witness:
                line += f"  (gap {flag.max_gap:.3g} at {flag.witness.get('cell')})"
            if flag.note:
                line += f"  [{flag.note}]"
            lines.append(line)
        return "\n".join(lines)


def _combine(clauses: list[tuple[str, CheckResult | None]]) -> FlagResult:
    """fails > undefined > holds; carries the first failing witness."""
    worst = 0.0
    saw_undefined = False
    note = ""
    for kind, res in clauses:
        if kind == "undefined":
            saw_undefined = True
            note = res if isinstance(res, str) else note
            continue
        worst = max(worst, res.max_gap)
        if res.status == "fails":
            return FlagResult("fails", res.witness, res.max_gap)
    if saw_undefined:
        return FlagResult("undefined", None, worst, note=note or "zero-probability condition")
    return FlagResult("holds", None, worst)


def _positive_patterns(joint: DiscreteJoint) -> list[tuple[int, ...]]:
    ind_names = [joint.indicators[p] for p in joint.predictors]
    marg = _marginal_ordered(joint, ind_names, None)
    return [tuple(int(v) for v in m) for m in np.argwhere(marg > 0)]


def classify(joint: DiscreteJoint, tol: float = DEFAULT_TOL,
             min_mass: float = 0.0) -> MechanismReport:
    """Evaluate all six mechanism flags on a probability table.

    ``tol`` and ``min_mass`` default to exact-table behaviour; empirical
    (sampled or binned) tables need both loosened.
    """
    x_vars = list(joint.predictors)
    y = joint.outcome
    ind_x = [joint.indicators[p] for p in joint.predictors]
    ind_y = joint.indicators[y]
    patterns = _positive_patterns(joint)
    p_my1 = joint.event_mass({ind_y: 1})
    p_my0 = joint.event_mass({ind_y: 0})

    def ci(a, b, c):
        return check_ci(joint, a, b, c, tol, min_mass)

    # MCAR: every indicator assignment independent of the values jointly
    mcar_clauses = []
    for assign in itertools.product((0, 1), repeat=len(ind_x) + 1):
        event = dict(zip([*ind_x, ind_y], assign))
        mcar_clauses.append(("check", ci(event, x_vars + [y], [])))
    flags = {"MCAR": _combine(mcar_clauses)}

    mar, ym, yo, nimo = [], [], [], []
    for m in patterns:
        event = dict(zip(ind_x, m))
        obs = [x_vars[k] for k, bit in enumerate(m) if bit == 0]
        mis = [x_vars[k] for k, bit in enumerate(m) if bit == 1]
        if p_my0 > 0:
            mar.append(("check", ci({**event, ind_y: 0}, mis, obs + [y])))
        else:
            mar.append(("undefined", "outcome always missing"))
        if p_my1 > 0:
            mar.append(("check", ci({**event, ind_y: 1}, mis + [y], obs)))
        else:
            mar.append(("undefined", "outcome never missing"))
        ym.append(("check", ci(event, mis + [y], obs)))
        yo.append(("check", ci(event, mis, obs + [y])))
        nimo.append(("check", ci(event, [y], obs)))
    flags["MAR"] = _combine(mar)
    flags["MARX_YM"] = _combine(ym)
    flags["MARX_YO"] = _combine(yo)
    flags["NIMO"] = _combine(nimo)

    complete = (0,) * len(x_vars)
    if joint.event_mass(dict(zip(ind_x, complete))) > 0:
        res = ci(dict(zip(ind_x, complete)), [y], x_vars)
        flags["NICO"] = _combine([("check", res)])
    else:
        flags["NICO"] = FlagResult("undefined", note="no fully-observed pattern")
    return MechanismReport(flags=flags, tol=tol)


# ---------------------------------------------------------------------------
# Lattice verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeReport:
    n_joints: int
    violations: list = field(default_factory=list)

    @property
    def n_violations(self) -> int:
        return len(self.violations)


def verify_lattice(joints, tol: float = DEFAULT_TOL) -> LatticeReport:
    """Check every sampled joint against the implication lattice.

    A violation is an edge whose antecedent flags all hold while the
    consequent fails; ``undefined`` never falsifies an edge.
    """
    joints = list(joints)
    if not joints:
        raise InputError("need at least one joint")
    violations = []
    for k, joint in enumerate(joints):
        report = classify(joint, tol)
        for antecedents, consequent in LATTICE_EDGES:
            if all(report.status(a) == "holds" for a in antecedents):
                if report.status(consequent) == "fails":
                    violations.append(
                        {"joint": k, "edge": (antecedents, consequent),
                         "report": {n: report.status(n) for n in FLAG_NAMES}}
                    )
    return LatticeReport(n_joints=len(joints), violations=violations)


# ---------------------------------------------------------------------------
# Constructors: named joints and samplers
# ---------------------------------------------------------------------------

def _binary(name):
    return Variable(name, (0, 1))


def from_conditional_missingness(p_xy, miss_given_xy, predictors, outcome,
                                 indicators, levels=None):
    """Joint from a value table and per-cell conditional missingness table.

    ``p_xy``: array over the value variables. ``miss_given_xy``: mapping from
    indicator assignment tuples to arrays of conditional probabilities with
    the same shape as ``p_xy``.
    """
    p_xy = np.asarray(p_xy, dtype=float)
    names = list(predictors) + [outcome]
    ind_names = [indicators[n] for n in names]
    n_ind = len(ind_names)
    shape = p_xy.shape + (2,) * n_ind
    probs = np.zeros(shape)
    for assign, cond in miss_given_xy.items():
        probs[(Ellipsis, *assign)] = p_xy * np.asarray(cond, dtype=float)
    variables = []
    for k, n in enumerate(names):
        lv = tuple(levels[n]) if levels and n in levels else tuple(range(p_xy.shape[k]))
        variables.append(Variable(n, lv))
    variables += [_binary(n) for n in ind_names]
    return DiscreteJoint(tuple(variables), probs, tuple(predictors), outcome,
                         dict(indicators))


def mar_but_informative_joint(a=0.1, b=0.1, c=0.2, d=0.1, e=0.2, p_xy=None) -> DiscreteJoint:
    """A MAR joint whose predictor-indicator law still depends on the outcome.

    One binary predictor X and binary outcome Y; conditional probabilities of
    (M_X, M_Y) given (X, Y) are parameterised so that the MAR clauses hold
    exactly while Pr(M_X | X, Y) varies with Y (requires b != c). All
    conditional masses must lie in (0, 1).
    """
    for name, v in (("a", a), ("b", b), ("c", c), ("d", d), ("e", e)):
        if not (0 < v < 1):
            raise InputError(f"{name} must lie in (0,1), got {v}")
    if p_xy is None:
        p_xy = np.full((2, 2), 0.25)
    p_xy = np.asarray(p_xy, dtype=float)
    cond = {}
    for x, yv in itertools.product((0, 1), (0, 1)):
        bc = b if yv == 0 else c
        de = d if x == 0 else e
        row = {(0, 0): 1 - (a + bc + de), (0, 1): de, (1, 0): bc, (1, 1): a}
        if any(not (0 < v < 1) for v in row.values()):
            raise InputError("parameters leave a conditional mass outside (0,1)")
        for assign, v in row.items():
            cond.setdefault(assign, np.zeros((2, 2)))[x, yv] = v
    return from_conditional_missingness(
        p_xy, cond, predictors=("X",), outcome="Y",
        indicators={"X": "M_X", "Y": "M_Y"},
    )


def ccs_counterexample(degenerate: bool = False):
    """Discrete instance where the complete-case sub-model limit for the
    pattern (X1 observed, X2 missing) differs from both prediction targets.

    Two missable binary predictors whose indicators each depend on both
    predictors. Returns the joint and a demonstration comparing, at X1 = 1:

      limit   Pr(Y=1 | X1, M1=0)           (what CCS converges to)
      mu      Pr(Y=1 | X1)                 (missingness-unconditional)
      mc      Pr(Y=1 | X1, M1=0, M2=1)     (missingness-conditional)

    With ``degenerate=True`` the indicators depend on X1 only, all three
    quantities coincide and the demonstration collapses.
    """
    p_x1 = np.array([0.5, 0.5])
    p_x2_given_x1 = np.array([[0.7, 0.3], [0.3, 0.7]])  # [x1, x2]
    p_y1 = lambda x1, x2: 0.15 + 0.35 * x1 + 0.35 * x2

    if degenerate:
        m1 = lambda x1, x2: 0.25 + 0.30 * x1
        m2 = lambda x1, x2: 0.40 + 0.15 * x1
    else:
        m1 = lambda x1, x2: 0.10 + 0.15 * x1 + 0.30 * x2
        m2 = lambda x1, x2: 0.10 + 0.30 * x1 + 0.15 * x2

    shape = (2, 2, 2)  # X1, X2, Y
    p_xy = np.zeros(shape)
    m1_t = np.zeros(shape)
    m2_t = np.zeros(shape)
    for x1, x2, yv in itertools.product((0, 1), repeat=3):
        py = p_y1(x1, x2)
        p_xy[x1, x2, yv] = p_x1[x1] * p_x2_given_x1[x1, x2] * (py if yv else 1 - py)
        m1_t[x1, x2, yv] = m1(x1, x2)
        m2_t[x1, x2, yv] = m2(x1, x2)

    cond = {}
    for b1, b2 in itertools.product((0, 1), (0, 1)):
        w1 = m1_t if b1 else 1 - m1_t
        w2 = m2_t if b2 else 1 - m2_t
        cond[(b1, b2, 0)] = w1 * w2          # M_Y = 0 always
        cond[(b1, b2, 1)] = np.zeros(shape)
    joint = from_conditional_missingness(
        p_xy, cond, predictors=("X1", "X2"), outcome="Y",
        indicators={"X1": "M1", "X2": "M2", "Y": "MY"},
    )

    demo = {}
    for x1 in (0, 1):
        limit = joint.cond_prob({"Y": 1}, {"X1": x1, "M1": 0})
        mu = joint.cond_prob({"Y": 1}, {"X1": x1})
        mc = joint.cond_prob({"Y": 1}, {"X1": x1, "M1": 0, "M2": 1})
        demo[x1] = {
            "limit": limit, "mu": mu, "mc": mc,
            "gap_vs_mu": abs(limit - mu), "gap_vs_mc": abs(limit - mc),
        }
    return joint, demo


def sample_mechanism_joints(n: int, rng: np.random.Generator):
    """Random joints mixing raw Dirichlet tables with structured archetypes.

    The structured families make antecedent flags actually hold (pure
    Dirichlet tables fail every independence almost surely), so implication
    checking is exercised on both sides.
    """
    joints = []
    names = ("X1", "X2", "Y")
    indicators = {"X1": "M1", "X2": "M2", "Y": "MY"}

    def build(p_xyz, m1_t, my_t):
        shape = p_xyz.shape
        cond = {}
        for b1, by in itertools.product((0, 1), (0, 1)):
            w1 = m1_t if b1 else 1 - m1_t
            wy = my_t if by else 1 - my_t
            cond[(b1, 0, by)] = w1 * wy
            cond[(b1, 1, by)] = np.zeros(shape)
        return from_conditional_missingness(
            p_xyz, cond, predictors=("X1", "X2"), outcome="Y", indicators=indicators
        )

    for k in range(n):
        kind = k % 5
        p_xyz = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
        shape = (2, 2, 2)
        ax = lambda: np.broadcast_to(rng.uniform(0.05, 0.95), shape).copy()
        if kind == 0:
            # raw: missingness of X1 drawn per cell (generically nothing holds)
            m1_t = rng.uniform(0.05, 0.95, size=shape)
            my_t = rng.uniform(0.05, 0.95, size=shape)
        elif kind == 1:
            # completely random: constant hazards (MCAR by construction)
            m1_t, my_t = ax(), ax()
        elif kind == 2:
            # hazard on the always-observed predictor (MAR-style)
            h = rng.uniform(0.05, 0.95, size=2)
            m1_t = h[np.indices(shape)[1]]
            my_t = ax()
        elif kind == 3:
            # hazard on the missable predictor itself (NICO-style)
            h = rng.uniform(0.05, 0.95, size=2)
            m1_t = h[np.indices(shape)[0]]
            my_t = ax()
        else:
            # hazard on the outcome (MARX-YO-style)
            h = rng.uniform(0.05, 0.95, size=2)
            m1_t = h[np.indices(shape)[2]]
            my_t = ax()
        joints.append(build(p_xyz, m1_t, my_t))
    return joints


# ---------------------------------------------------------------------------
# CSV ingestion of probability tables
# ---------------------------------------------------------------------------

def joint_from_csv(path, outcome: str = "Y") -> DiscreteJoint:
    """Read a table with one row per configuration, columns = variables + prob.

    Indicator columns are named ``M_<var>``; value variables lacking one are
    treated as always observed (a constant-0 indicator is added).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if "prob" not in header:
            raise InputError(f"{path}: missing 'prob' column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or row == [""]:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} cells")
            rows.append([cell.strip() for cell in row])
    var_cols = [h for h in header if h != "prob"]
    if outcome not in var_cols:
        raise InputError(f"{path}: outcome column {outcome!r} not found")
    prob_idx = header.index("prob")

    def parse(cell):
        try:
            f = float(cell)
        except ValueError:
            return cell
        return int(f) if f == int(f) else f

    levels = {v: [] for v in var_cols}
    entries = []
    for row in rows:
        assign = {}
        for h, cell in zip(header, row):
            if h == "prob":
                continue
            val = parse(cell)
            if val not in levels[h]:
                levels[h].append(val)
            assign[h] = val
        try:
            mass = float(row[prob_idx])
        except ValueError:
            raise InputError(f"{path}: non-numeric prob {row[prob_idx]!r}") from None
        entries.append((assign, mass))

    indicator_cols = [v for v in var_cols if v.startswith("M_")]
    value_cols = [v for v in var_cols if not v.startswith("M_")]
    indicators = {}
    variables = []
    for v in value_cols:
        variables.append(Variable(v, tuple(sorted(levels[v], key=repr))))
    extra = []
    for v in value_cols:
        ind = f"M_{v}"
        if ind in indicator_cols:
            indicators[v] = ind
            variables.append(_binary(ind))
        else:
            indicators[v] = ind
            extra.append(ind)
            variables.append(_binary(ind))
    for ind in indicator_cols:
        if ind not in indicators.values():
            raise InputError(f"{path}: indicator {ind!r} has no matching variable")

    shape = tuple(len(v.levels) for v in variables)
    probs = np.zeros(shape)
    name_order = [v.name for v in variables]
    level_maps = {v.name: {lv: i for i, lv in enumerate(v.levels)} for v in variables}
    for assign, mass in entries:
        for ind in extra:
            assign[ind] = 0
        idx = tuple(level_maps[nm][assign[nm]] for nm in name_order)
        probs[idx] += mass
    predictors = tuple(v for v in value_cols if v != outcome)
    if not predictors:
        raise InputError(f"{path}: no predictor columns")
    return DiscreteJoint(tuple(variables), probs, predictors, outcome, indicators)
