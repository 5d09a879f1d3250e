"""Binary integer linear programs: model builder, a deterministic
depth-first branch-and-bound solver, and CPLEX-LP export.

The solver branches on variables in declaration order and tries the value
favoured by the objective first (0 on ties).  Pruning uses

* row propagation: a ``<=`` row whose slack is smaller than the magnitude of
  an unassigned coefficient forces that variable;
* an objective bound: the best-case contribution of every unassigned
  variable, plus the cheapest fractional repair of each row in a greedy
  packing of rows that the best-case completion violates (packed rows
  share no unassigned variable, so their repair costs add up).

Rows may be added one at a time or as homogeneous numpy blocks; the latter
keeps models with millions of rows (cograph editing on 50 genes) in memory.
"""

from __future__ import annotations

import math
import re
import time
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-9

OPTIMAL = "optimal"
FEASIBLE = "feasible-incumbent"
INFEASIBLE = "infeasible"
NO_INCUMBENT = "timeout-no-incumbent"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    name: str


@dataclass(frozen=True)
class _Block:
    """``m`` rows sharing one sense; ``cols[r]`` are the variables of row r."""

    cols: np.ndarray  # (m, k) int
    coefs: np.ndarray  # (m, k) float
    sense: str
    rhs: np.ndarray  # (m,)
    name: str

    def __len__(self) -> int:
        return len(self.rhs)


class Model:
    """A binary ILP.  Variables are referred to by name or by index."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self._parts: list[Constraint | _Block] = []
        self.objective: dict[int, float] = {}
        self.sense = "min"
        self.constant = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_constraints(self) -> int:
        return sum(1 if isinstance(p, Constraint) else len(p) for p in self._parts)

    def add_var(self, name: str) -> int:
        if name in self.index:
            raise ModelError(f"duplicate variable {name!r}")
        self.index[name] = len(self.names)
        self.names.append(name)
        return self.index[name]

    def var(self, key: str | int) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < len(self.names):
                raise ModelError(f"undeclared variable index {key}")
            return int(key)
        try:
            return self.index[key]
        except KeyError:
            raise ModelError(f"undeclared variable {key!r}") from None

    def _terms(self, terms) -> dict[int, float]:
        if isinstance(terms, Mapping):
            terms = terms.items()
        out: dict[int, float] = {}
        for key, coef in terms:
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite coefficient {coef} on {key!r}")
            j = self.var(key)
            out[j] = out.get(j, 0.0) + coef
        return {j: c for j, c in out.items() if c != 0.0}

    @staticmethod
    def _check_sense(sense: str) -> None:
        if sense not in ("<=", ">=", "="):
            raise ModelError(f"bad comparator {sense!r}")

    def add_constraint(self, terms, sense: str, rhs: float, name: str | None = None) -> None:
        self._check_sense(sense)
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ModelError("non-finite right-hand side")
        coeffs = tuple(sorted(self._terms(terms).items()))
        self._parts.append(Constraint(coeffs, sense, rhs, name or f"c{self.num_constraints}"))

    def add_block(self, cols, coefs, sense: str, rhs, name: str = "b") -> None:
        """Add ``len(cols)`` rows ``sum_k coefs[r,k] * x[cols[r,k]] (sense) rhs[r]``.

        Variables within a row must be distinct.
        """
        self._check_sense(sense)
        cols = np.asarray(cols, dtype=np.int64)
        if cols.ndim != 2:
            raise ModelError("block columns must be a 2-d array")
        m, k = cols.shape
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), (m, k)).copy()
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (m,)).copy()
        if m == 0:
            return
        if cols.min() < 0 or cols.max() >= self.num_vars:
            raise ModelError("block references an undeclared variable")
        if not (np.isfinite(coefs).all() and np.isfinite(rhs).all()):
            raise ModelError("non-finite coefficient in block")
        srt = np.sort(cols, axis=1)
        if k > 1 and (srt[:, 1:] == srt[:, :-1]).any():
            raise ModelError("repeated variable inside a block row")
        self._parts.append(_Block(cols, coefs, sense, rhs, name))

    @property
    def constraints(self) -> Iterator[Constraint]:
        for part in self._parts:
            if isinstance(part, Constraint):
                yield part
                continue
            for r in range(len(part)):
                coeffs = tuple(sorted((int(j), float(c)) for j, c in zip(part.cols[r], part.coefs[r]) if c != 0.0))
                yield Constraint(coeffs, part.sense, float(part.rhs[r]), f"{part.name}{r}")

    def set_objective(self, terms, sense: str = "min", constant: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"bad objective sense {sense!r}")
        self.objective = self._terms(terms)
        self.sense = sense
        self.constant = float(constant)

    def evaluate(self, values) -> float:
        return self.constant + sum(c * values[j] for j, c in self.objective.items())

    def is_feasible(self, values) -> bool:
        x = np.asarray(values, dtype=float)
        for part in self._parts:
            if isinstance(part, Constraint):
                act = np.array([sum(c * x[j] for j, c in part.coeffs)])
            else:
                act = (part.coefs * x[part.cols]).sum(axis=1)
            rhs = part.rhs
            if part.sense == "<=" and (act > rhs + EPS).any():
                return False
            if part.sense == ">=" and (act < rhs - EPS).any():
                return False
            if part.sense == "=" and (np.abs(act - rhs) > EPS).any():
                return False
        return True


@dataclass
class SolveOutcome:
    status: str
    values: list[int] | None
    objective: float | None
    nodes: int
    wall_time: float
    names: list[str] = field(default_factory=list, repr=False)

    @property
    def assignment(self) -> dict[str, int] | None:
        if self.values is None:
            return None
        return dict(zip(self.names, self.values))

    def value(self, name: str) -> int:
        return self.values[self.names.index(name)]

    @property
    def has_solution(self) -> bool:
        return self.values is not None


def _as_le_rows(model: Model):
    """All constraints as ``<=`` rows in CSR form (indptr, indices, data, rhs)
    plus a flag for constant rows that can never hold."""
    ptr_parts: list[np.ndarray] = []
    idx_parts: list[np.ndarray] = []
    dat_parts: list[np.ndarray] = []
    rhs_parts: list[np.ndarray] = []
    bad = False
    adhoc_idx: list[int] = []
    adhoc_dat: list[float] = []
    adhoc_len: list[int] = []
    adhoc_rhs: list[float] = []

    def flush() -> None:
        if adhoc_len:
            idx_parts.append(np.array(adhoc_idx, dtype=np.int64))
            dat_parts.append(np.array(adhoc_dat, dtype=float))
            ptr_parts.append(np.array(adhoc_len, dtype=np.int64))
            rhs_parts.append(np.array(adhoc_rhs, dtype=float))
            adhoc_idx.clear(), adhoc_dat.clear(), adhoc_len.clear(), adhoc_rhs.clear()

    for part in model._parts:
        signs = []
        if part.sense in ("<=", "="):
            signs.append(1.0)
        if part.sense in (">=", "="):
            signs.append(-1.0)
        if isinstance(part, Constraint):
            for s in signs:
                b = s * part.rhs
                if not part.coeffs:
                    bad |= 0.0 > b + EPS
                    continue
                adhoc_idx.extend(j for j, _ in part.coeffs)
                adhoc_dat.extend(s * c for _, c in part.coeffs)
                adhoc_len.append(len(part.coeffs))
                adhoc_rhs.append(b)
            continue
        flush()
        m, k = part.cols.shape
        for s in signs:
            idx_parts.append(part.cols.reshape(-1))
            dat_parts.append((s * part.coefs).reshape(-1))
            ptr_parts.append(np.full(m, k, dtype=np.int64))
            rhs_parts.append(s * part.rhs)
    flush()
    if idx_parts:
        lengths = np.concatenate(ptr_parts)
        indptr = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        return indptr, np.concatenate(idx_parts), np.concatenate(dat_parts), np.concatenate(rhs_parts), bad
    return np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), bad


class _Search:
    """State of one branch-and-bound run."""

    def __init__(self, model: Model):
        n = model.num_vars
        self.n = n
        sign = 1.0 if model.sense == "min" else -1.0
        cost = np.zeros(n)
        for j, c in model.objective.items():
            cost[j] = sign * c
        self.cost = cost
        self.pref = (cost < 0).astype(np.int8)

        indptr, indices, data, rhs, bad = _as_le_rows(model)
        self.trivially_infeasible = bad
        self.indptr, self.indices, self.data, self.rhs = indptr, indices, data, rhs
        m = len(rhs)
        self.m = m
        starts = indptr[:-1]
        if m:
            self.minact = np.add.reduceat(np.minimum(data, 0.0), starts)
            self.maxabs = np.maximum.reduceat(np.abs(data), starts)
        else:
            self.minact = np.zeros(0)
            self.maxabs = np.zeros(0)
        row_of = np.repeat(np.arange(m, dtype=np.int64), np.diff(indptr))
        order = np.argsort(indices, kind="stable")
        self.col_rows = row_of[order]
        col_dat = data[order]
        self.col_up = np.maximum(col_dat, 0.0)  # activity change for value 1
        self.col_dn = np.maximum(-col_dat, 0.0)  # for value 0
        self.col_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(indices, minlength=n), out=self.col_ptr[1:])

        self.col_dat = col_dat
        self.x = np.full(n, -1, dtype=np.int8)
        self.obj_lb = float(np.minimum(cost, 0.0).sum())
        self.trail: list[int] = []
        # activity of each row under "assigned values, preferred elsewhere"
        self.prefact = (
            np.add.reduceat(data * self.pref[indices], starts) if m else np.zeros(0)
        )

    def row(self, i: int) -> tuple[list[int], list[float]]:
        s, e = self.indptr[i], self.indptr[i + 1]
        return self.indices[s:e].tolist(), self.data[s:e].tolist()

    # -- bound ----------------------------------------------------------------

    def bound(self, cutoff: float = math.inf, max_rows: int = 4000) -> float:
        """Objective lower bound for the current node.

        Rows violated by the preferred completion are packed greedily so that
        their unassigned variables are pairwise disjoint; each packed row adds
        its cheapest fractional repair.  Stops early once ``cutoff`` is hit.
        """
        lb = self.obj_lb
        if lb >= cutoff - EPS or not self.m:
            return lb
        violated = np.flatnonzero(self.prefact > self.rhs + EPS)
        if violated.size == 0:
            return lb
        used: set[int] = set()
        x = self.x
        for i in violated[:max_rows].tolist():
            vs, _ = self.row(i)
            free = [j for j in vs if x[j] < 0]
            if used.intersection(free):
                continue
            lb += self._repair_cost(i)
            if lb >= cutoff - EPS:
                return lb
            used.update(free)
        return lb

    def _repair_cost(self, i: int) -> float:
        """Cheapest fractional set of flips away from the preferred values
        that makes row ``i`` hold; ``inf`` when no completion can."""
        act = 0.0
        flips = []
        x, pref, cost = self.x, self.pref, self.cost
        vs, cs = self.row(i)
        for j, a in zip(vs, cs):
            xj = x[j]
            if xj >= 0:
                act += a * xj
            else:
                p = pref[j]
                act += a * p
                gain = a * (2 * p - 1)
                if gain > EPS:
                    flips.append((abs(cost[j]) / gain, gain))
        deficit = act - self.rhs[i]
        if deficit <= EPS:
            return 0.0
        flips.sort()
        total = 0.0
        for ratio, gain in flips:
            take = min(gain, deficit)
            total += ratio * take
            deficit -= take
            if deficit <= EPS:
                return total
        return math.inf

    # -- assignment and propagation -------------------------------------------

    def assign(self, j: int, v: int) -> bool:
        """Assign and propagate; False on conflict.  Everything done is on the
        trail, so ``undo`` restores the state either way."""
        queue = [(j, v)]
        x = self.x
        while queue:
            j, v = queue.pop()
            if x[j] >= 0:
                if x[j] != v:
                    return False
                continue
            x[j] = v
            self.trail.append(j)
            c = self.cost[j]
            self.obj_lb += c * v - min(c, 0.0)
            a, b = self.col_ptr[j], self.col_ptr[j + 1]
            rows = self.col_rows[a:b]
            if b > a:
                self.minact[rows] += self.col_up[a:b] if v else self.col_dn[a:b]
            p = self.pref[j]
            if v != p and b > a:
                self.prefact[rows] += self.col_dat[a:b] * (v - p)
            if b == a:
                continue
            slack = self.rhs[rows] - self.minact[rows]
            if (slack < -EPS).any():
                return False
            tight = rows[slack < self.maxabs[rows] - EPS]
            for i in tight.tolist():
                s = self.rhs[i] - self.minact[i]
                vs, cs = self.row(i)
                for k2, a2 in zip(vs, cs):
                    if x[k2] < 0 and abs(a2) > s + EPS:
                        queue.append((k2, 0 if a2 > 0 else 1))
        return True

    def undo(self, mark: int) -> None:
        trail = self.trail
        x = self.x
        while len(trail) > mark:
            j = trail.pop()
            v = x[j]
            a, b = self.col_ptr[j], self.col_ptr[j + 1]
            if b > a:
                rows = self.col_rows[a:b]
                self.minact[rows] -= self.col_up[a:b] if v else self.col_dn[a:b]
                p = self.pref[j]
                if v != p:
                    self.prefact[rows] -= self.col_dat[a:b] * (v - p)
            c = self.cost[j]
            self.obj_lb -= c * v - min(c, 0.0)
            x[j] = -1

    def initial_propagation(self) -> bool:
        if not self.m:
            return True
        slack = self.rhs - self.minact
        if (slack < -EPS).any():
            return False
        for i in np.flatnonzero(slack < self.maxabs - EPS).tolist():
            vs, cs = self.row(i)
            for j, a in zip(vs, cs):
                s = self.rhs[i] - self.minact[i]
                if self.x[j] < 0 and abs(a) > s + EPS:
                    if not self.assign(j, 0 if a > 0 else 1):
                        return False
        return True



def solve(model: Model, time_limit: float | None = None, node_limit: int | None = None) -> SolveOutcome:
    """Solve ``model`` exactly.

    ``time_limit`` (seconds, wall clock) and ``node_limit`` cap the search;
    when either is hit the best incumbent is returned with status
    ``feasible-incumbent``.  ``node_limit`` keeps truncated runs
    reproducible across machines.
    """
    start = time.perf_counter()
    deadline = None if time_limit is None else start + time_limit
    names = list(model.names)

    def outcome(status, values, nodes):
        obj = None if values is None else model.evaluate(values)
        return SolveOutcome(status, values, obj, nodes, time.perf_counter() - start, names)

    s = _Search(model)
    if s.trivially_infeasible or not s.initial_propagation() or math.isinf(s.bound()):
        return outcome(INFEASIBLE, None, 0)

    n = s.n
    best_val = math.inf
    best: list[int] | None = None
    nodes = 0
    truncated = False
    # decision stack entries: (var, trail mark, alternative still open)
    stack: list[tuple[int, int, bool]] = []
    ok = True
    pos = 0
    root_bound = s.bound()

    while True:
        if ok and s.bound(best_val) >= best_val - EPS:
            ok = False
        if ok:
            while pos < n and s.x[pos] >= 0:
                pos += 1
            if pos == n:
                val = float(s.cost @ s.x)
                if val < best_val - EPS:
                    best_val = val
                    best = s.x.astype(int).tolist()
                    if best_val <= root_bound + EPS:
                        break
                ok = False
            else:
                nodes += 1
                if (node_limit is not None and nodes > node_limit) or (
                    deadline is not None and nodes % 32 == 0 and time.perf_counter() > deadline
                ):
                    truncated = True
                    break
                j = pos
                stack.append((j, len(s.trail), True))
                ok = s.assign(j, int(s.pref[j]))
                continue
        # backtrack to the deepest decision with an untried branch
        while stack:
            j, mark, open_ = stack.pop()
            s.undo(mark)
            if open_:
                stack.append((j, mark, False))
                ok = s.assign(j, 1 - int(s.pref[j]))
                pos = j
                break
        else:
            break

    if truncated:
        return outcome(FEASIBLE if best is not None else NO_INCUMBENT, best, nodes)
    if best is None:
        return outcome(INFEASIBLE, None, nodes)
    return outcome(OPTIMAL, best, nodes)


def brute_force(model: Model) -> tuple[float | None, list[int] | None]:
    """Exhaustive 2^n enumeration; returns (objective, first optimal point)."""
    n = model.num_vars
    if n > 22:
        raise ValueError("brute force limited to 22 variables")
    best = None
    arg = None
    better = (lambda a, b: a < b - EPS) if model.sense == "min" else (lambda a, b: a > b + EPS)
    for mask in range(1 << n):
        values = [(mask >> j) & 1 for j in range(n)]
        if not model.is_feasible(values):
            continue
        val = model.evaluate(values)
        if best is None or better(val, best):
            best, arg = val, values
    return best, arg


# --------------------------------------------------------------------------
# LP export
# --------------------------------------------------------------------------

_LP_BAD = re.compile(r"[^A-Za-z0-9_.]")


def lp_names(names: Iterable[str]) -> list[str]:
    """Map variable names to LP-safe identifiers (stable and unique)."""
    out: list[str] = []
    seen: set[str] = set()
    for name in names:
        base = _LP_BAD.sub("_", name)
        if not base or base[0].isdigit() or base[0] in ".eE":
            base = "x_" + base
        cand, k = base, 1
        while cand in seen:
            k += 1
            cand = f"{base}_{k}"
        seen.add(cand)
        out.append(cand)
    return out


def _fmt(c: float) -> str:
    return repr(int(c)) if float(c).is_integer() else repr(float(c))


def _expr(coeffs: Iterable[tuple[int, float]], names: list[str]) -> str:
    parts = []
    for j, c in coeffs:
        sgn = "-" if c < 0 else "+"
        mag = abs(c)
        term = names[j] if mag == 1 else f"{_fmt(mag)} {names[j]}"
        parts.append(f"{sgn} {term}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(model: Model) -> str:
    """CPLEX-LP text for ``model``.  A constant objective offset is recorded
    in a comment since the format has no slot for it."""
    names = lp_names(model.names)
    lines = [f"\\ {model.name}"]
    if model.constant:
        lines.append(f"\\ objective constant {_fmt(model.constant)}")
    lines.append("Minimize" if model.sense == "min" else "Maximize")
    lines.append(f" obj: {_expr(sorted(model.objective.items()), names)}")
    lines.append("Subject To")
    for con in model.constraints:
        cname = _LP_BAD.sub("_", con.name)
        lines.append(f" {cname}: {_expr(con.coeffs, names)} {con.sense} {_fmt(con.rhs)}")
    lines.append("Binary")
    for k in range(0, len(names), 8):
        lines.append(" " + " ".join(names[k : k + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"
