"""Data and model actions as parameter trees, plus their execution semantics.

An action template is walked slot by slot; each slot offers a candidate set
filtered by hard (feasibility) preconditions, and a parameter policy picks one
value. A fully bound action is then vetted by qualitative (state-quality) and
search (duplicate-avoidance) preconditions before it may be executed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from datetime import timedelta
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .tabular import (
    _EPOCH,
    Column,
    ColumnKind,
    Dataset,
    format_cell,
    is_qualitative,
    is_quantitative,
    parse_datetime,
    parse_timedelta,
)

MIN_ROWS = 5  # a where action must keep at least this many rows

BIN_COUNTS = tuple(range(2, 11))
QUANTILE_COUNTS = (2, 3, 4, 5, 10)
TIME_ATTRS = ("year", "quarter", "month", "day", "hour", "minute", "seconds")
TREE_DEPTHS = (2, 3)
CLUSTER_COUNTS = tuple(range(2, 11))
ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("=", "!=", ">", "<")
COMMUTATIVE_OPS = ("+", "*", "=", "!=")
QUANT_AGGS = ("min", "max", "avg", "median", "sum", "std")
BOOL_AGGS = ("all", "any")
CAT_AGGS = ("mode", "freq")


class ActionKind(str, Enum):
    SELECT = "select"
    DISCRETIZE = "derive-discretize"
    BINOP = "derive-binop"
    WHERE = "where"
    GROUPBY = "groupby"
    TREE = "decision-tree"
    UNARY_OUTLIERS = "unary-outliers"
    BINARY_OUTLIERS = "binary-outliers"
    CLUSTERING = "clustering"
    TREND = "trend"
    RULES = "association-rules"


DATA_KINDS = (
    ActionKind.SELECT,
    ActionKind.DISCRETIZE,
    ActionKind.BINOP,
    ActionKind.WHERE,
    ActionKind.GROUPBY,
)
MODEL_KINDS = (
    ActionKind.TREE,
    ActionKind.UNARY_OUTLIERS,
    ActionKind.BINARY_OUTLIERS,
    ActionKind.CLUSTERING,
    ActionKind.TREND,
    ActionKind.RULES,
)


class ActionError(Exception):
    pass


@dataclass
class Verdict:
    status: str  # ok | hard | qualitative | search
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


OK = Verdict("ok")


@dataclass
class GroundAction:
    kind: ActionKind
    bindings: tuple  # ordered (slot, value) pairs
    canonical: str

    def __hash__(self):
        return hash(self.canonical)

    def __eq__(self, other):
        return isinstance(other, GroundAction) and self.canonical == other.canonical

    @property
    def is_data(self) -> bool:
        return self.kind in DATA_KINDS

    def get(self, slot: str):
        for s, v in self.bindings:
            if s == slot:
                return v
        raise KeyError(slot)

    def param_tokens(self) -> list:
        """Value identities credited by the action-statistics update."""
        return [format_cell(v) if not isinstance(v, str) else v for _, v in self.bindings]


# ---------------------------------------------------------------------------
# Parameter-value statistics and selection policies
# ---------------------------------------------------------------------------

EPSILON = 0.01  # exploration floor for unvisited / harmful parameter values


@dataclass
class ParamValueStats:
    delta_sum: float = 0.0
    visits: int = 0

    @property
    def mean_delta(self) -> float:
        return self.delta_sum / self.visits if self.visits else 0.0


class ParamStatsStore:
    """Per-value reward-delta statistics shared across all parameter slots.

    Sharing by value identity lets e.g. a rewarding where(C < v) nudge later
    choices of the column C in unrelated slots.
    """

    def __init__(self):
        self._stats: dict = {}

    def get(self, token: str) -> ParamValueStats:
        s = self._stats.get(token)
        if s is None:
            s = self._stats[token] = ParamValueStats()
        return s

    def update(self, tokens: Sequence[str], delta: float) -> None:
        for tok in tokens:
            s = self.get(tok)
            s.delta_sum += delta
            s.visits += 1


def _token(value) -> str:
    return value if isinstance(value, str) else format_cell(value)


def choose_value(
    candidates: Sequence,
    policy: str,
    store: ParamStatsStore,
    rng: np.random.Generator,
    uct_c: float = math.sqrt(2),
):
    """Pick one candidate under the configured parameter policy."""
    if len(candidates) == 1:
        return candidates[0]
    if policy == "random":
        return candidates[int(rng.integers(len(candidates)))]
    stats = [store.get(_token(v)) for v in candidates]
    if policy == "weighted":
        weights = np.array(
            [EPSILON if s.visits == 0 else max(s.mean_delta, EPSILON) for s in stats]
        )
        probs = weights / weights.sum()
        return candidates[int(rng.choice(len(candidates), p=probs))]
    if policy == "uct":
        for v, s in zip(candidates, stats):
            if s.visits == 0:
                return v
        total = sum(s.visits for s in stats)
        scores = [
            s.mean_delta + uct_c * math.sqrt(math.log(total) / s.visits) for s in stats
        ]
        return candidates[int(np.argmax(scores))]
    raise ActionError(f"unknown parameter policy {policy!r}")


# ---------------------------------------------------------------------------
# Binary-operation type compatibility
# ---------------------------------------------------------------------------

def _binop_partners(op: str, kind: ColumnKind) -> tuple:
    """Column kinds usable on the right of ``kind op right``."""
    K = ColumnKind
    if op == "+":
        return {
            K.NUMERICAL: (K.NUMERICAL,),
            K.DATETIME: (K.TIMEDELTA,),
            K.TIMEDELTA: (K.DATETIME, K.TIMEDELTA),
        }.get(kind, ())
    if op == "-":
        return {
            K.NUMERICAL: (K.NUMERICAL,),
            K.DATETIME: (K.DATETIME, K.TIMEDELTA),
            K.TIMEDELTA: (K.TIMEDELTA,),
        }.get(kind, ())
    if op in ("*", "/"):
        return (K.NUMERICAL,) if kind == K.NUMERICAL else ()
    if op in ("=", "!="):
        return (kind,)
    if op in (">", "<"):
        return (kind,) if is_quantitative(kind) else ()
    return ()


def binop_result_kind(op: str, left: ColumnKind, right: ColumnKind) -> Optional[ColumnKind]:
    K = ColumnKind
    if right not in _binop_partners(op, left):
        return None
    if op in COMPARE_OPS:
        return K.BOOLEAN
    if op == "+":
        if left == K.NUMERICAL:
            return K.NUMERICAL
        return K.TIMEDELTA if left == right == K.TIMEDELTA else K.DATETIME
    if op == "-":
        if left == K.NUMERICAL:
            return K.NUMERICAL
        if left == K.DATETIME:
            return K.TIMEDELTA if right == K.DATETIME else K.DATETIME
        return K.TIMEDELTA
    return K.NUMERICAL


# ---------------------------------------------------------------------------
# Aggregators
# ---------------------------------------------------------------------------

def _aggs_for(kind: ColumnKind) -> tuple:
    if kind == ColumnKind.BOOLEAN:
        return BOOL_AGGS
    if kind == ColumnKind.CATEGORICAL:
        return CAT_AGGS
    if kind == ColumnKind.DATETIME:
        # summing absolute dates is a type error, like datetime + datetime
        return tuple(a for a in QUANT_AGGS if a != "sum")
    return QUANT_AGGS


def _agg_result_kind(agg: str, kind: ColumnKind) -> ColumnKind:
    if agg in ("all", "any"):
        return ColumnKind.BOOLEAN
    if agg == "mode":
        return kind
    if agg == "freq":
        return ColumnKind.NUMERICAL
    if agg == "std":
        return ColumnKind.NUMERICAL if kind == ColumnKind.NUMERICAL else ColumnKind.TIMEDELTA
    return kind


def _aggregate(agg: str, kind: ColumnKind, cells: list, freq_value=None):
    """Aggregate the non-null cells of one group; None when empty."""
    if agg == "freq":
        return float(sum(1 for v in cells if v == freq_value))
    if not cells:
        return None
    if agg == "min":
        return min(cells)
    if agg == "max":
        return max(cells)
    if agg == "all":
        return all(cells)
    if agg == "any":
        return any(cells)
    if agg == "mode":
        counts: dict = {}
        for v in cells:
            counts[v] = counts.get(v, 0) + 1
        best = max(counts.values())
        return next(v for v in counts if counts[v] == best)
    if kind == ColumnKind.NUMERICAL:
        xs = np.array(cells, dtype=float)
    elif kind == ColumnKind.DATETIME:
        xs = np.array([(v - _EPOCH).total_seconds() for v in cells])
    else:
        xs = np.array([v.total_seconds() for v in cells])
    if agg == "avg":
        out = float(xs.mean())
    elif agg == "median":
        out = float(np.median(xs))
    elif agg == "sum":
        out = float(xs.sum())
    elif agg == "std":
        return (
            float(xs.std())
            if kind == ColumnKind.NUMERICAL
            else timedelta(seconds=float(xs.std()))
        )
    else:
        raise ActionError(f"unknown aggregator {agg!r}")
    if kind == ColumnKind.NUMERICAL:
        return out
    if kind == ColumnKind.DATETIME:
        return _EPOCH + timedelta(seconds=out)
    return timedelta(seconds=out)


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@dataclass
class ActionTemplate:
    """One action kind with its lifted parameter tree over a fixed dataset."""

    kind: ActionKind
    dataset: Dataset

    def next_slot(self, bound: list) -> Optional[tuple]:
        """Return (slot_name, candidates) for the next lifted node, or None."""
        d = self.dataset
        k = self.kind
        if k == ActionKind.SELECT:
            if bound:
                return None
            names = [c.name for c in d.select_pool if not d.has_column(c.name)]
            return ("column", names)
        if k == ActionKind.DISCRETIZE:
            if not bound:
                return ("target", [c.name for c in d.columns if is_quantitative(c.kind)])
            if len(bound) == 1:
                col = d.column(bound[0][1])
                methods = ["time"] if col.kind == ColumnKind.DATETIME else ["bins", "quantiles"]
                return ("method", methods)
            if len(bound) == 2:
                method = bound[1][1]
                args = {
                    "bins": list(BIN_COUNTS),
                    "quantiles": list(QUANTILE_COUNTS),
                    "time": list(TIME_ATTRS),
                }[method]
                return ("arg", args)
            return None
        if k == ActionKind.BINOP:
            kinds = [c.kind for c in d.columns]
            if not bound:
                ops = [
                    op
                    for op in ARITH_OPS + COMPARE_OPS
                    if any(
                        any(
                            kr in _binop_partners(op, kl)
                            for j, kr in enumerate(kinds)
                            if j != i
                        )
                        for i, kl in enumerate(kinds)
                    )
                ]
                return ("operator", ops)
            op = bound[0][1]
            if len(bound) == 1:
                lefts = [
                    c.name
                    for i, c in enumerate(d.columns)
                    if any(
                        o.kind in _binop_partners(op, c.kind)
                        for j, o in enumerate(d.columns)
                        if j != i
                    )
                ]
                return ("left", lefts)
            if len(bound) == 2:
                left = d.column(bound[1][1])
                rights = [
                    c.name
                    for c in d.columns
                    if c.name != left.name and c.kind in _binop_partners(op, left.kind)
                ]
                return ("right", rights)
            return None
        if k == ActionKind.WHERE:
            if not bound:
                if d.n_rows < MIN_ROWS + 1:
                    return ("column", [])
                return ("column", [c.name for c in d.columns if len(c.distinct()) >= 2])
            if len(bound) == 1:
                col = d.column(bound[0][1])
                ops = list(COMPARE_OPS) if is_quantitative(col.kind) else ["=", "!="]
                return ("operator", ops)
            if len(bound) == 2:
                col = d.column(bound[0][1])
                vals = (
                    list(col.quantile_values())
                    if is_quantitative(col.kind)
                    else list(col.distinct())
                )
                return ("value", vals)
            return None
        if k == ActionKind.GROUPBY:
            if not bound:
                return ("grouper", [c.name for c in d.columns if len(c.distinct()) >= 2])
            grouper = bound[0][1]
            done = {s.split(":", 1)[1] for s, _ in bound if s.startswith("agg:")}
            for c in d.columns:
                if c.name == grouper or c.name in done:
                    continue
                return (f"agg:{c.name}", list(_aggs_for(c.kind)))
            for s, v in bound:
                if s.startswith("agg:") and v == "freq":
                    col_name = s.split(":", 1)[1]
                    if not any(b[0] == f"freqval:{col_name}" for b in bound):
                        return (f"freqval:{col_name}", list(d.column(col_name).distinct()))
            return None
        if k == ActionKind.TREE:
            if not bound:
                if d.n_columns < 2 or d.n_rows < 10:
                    return ("target", [])
                targets = [
                    c.name
                    for c in d.columns
                    if len(c.distinct()) >= 2 and len(c.non_null()) >= 10
                ]
                return ("target", targets)
            if len(bound) == 1:
                return ("maxDepth", list(TREE_DEPTHS))
            return None
        if k == ActionKind.UNARY_OUTLIERS:
            if bound:
                return None
            return ("column", [c.name for c in d.columns if len(c.non_null()) >= 3])
        if k == ActionKind.BINARY_OUTLIERS:
            if bound:
                return None
            m = d.pearson()
            pairs = []
            for i in range(d.n_columns):
                for j in range(i + 1, d.n_columns):
                    if m.valid[i, j]:
                        a, b = sorted((d.columns[i].name, d.columns[j].name))
                        pairs.append((a, b))
            return ("pair", pairs)
        if k == ActionKind.CLUSTERING:
            if bound:
                return None
            if d.n_columns == 0:
                return ("k", [])
            distinct = d.distinct_row_count(limit=max(CLUSTER_COUNTS) + 1)
            ks = [k_ for k_ in CLUSTER_COUNTS if d.n_rows >= 2 * k_ and distinct >= k_]
            return ("k", ks)
        if k == ActionKind.TREND:
            if not bound:
                dts = [
                    c.name
                    for c in d.columns
                    if c.kind == ColumnKind.DATETIME and len(c.non_null()) >= 10
                ]
                return ("datetime", dts)
            if len(bound) == 1:
                dt = d.column(bound[0][1])
                ok_dt = ~np.isnan(dt.encoded())
                targets = []
                for c in d.columns:
                    if c.name == dt.name or not is_quantitative(c.kind):
                        continue
                    if int((ok_dt & ~np.isnan(c.encoded())).sum()) >= 10:
                        targets.append(c.name)
                return ("target", targets)
            return None
        if k == ActionKind.RULES:
            return None
        raise ActionError(f"unhandled kind {k}")

    def available(self) -> bool:
        """Cheap hard-precondition screen: does any root-leaf path exist?"""
        d = self.dataset
        if self.kind == ActionKind.RULES:
            return d.n_rows >= 10 and any(is_qualitative(c.kind) for c in d.columns)
        slot = self.next_slot([])
        return slot is not None and len(slot[1]) > 0


def enumerate_templates(d: Dataset) -> list:
    """Templates whose lifted sets survive hard-precondition filtering."""
    out = []
    for kind in DATA_KINDS + MODEL_KINDS:
        t = ActionTemplate(kind=kind, dataset=d)
        if t.available():
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# Canonical forms
# ---------------------------------------------------------------------------

def canonical_form(kind: ActionKind, bound: list) -> str:
    vals = {s: v for s, v in bound}
    if kind == ActionKind.SELECT:
        return f"select({vals['column']})"
    if kind == ActionKind.DISCRETIZE:
        return f"derive({vals['target']},{vals['method']},{_token(vals['arg'])})"
    if kind == ActionKind.BINOP:
        a, b, op = vals["left"], vals["right"], vals["operator"]
        if op in COMMUTATIVE_OPS:
            a, b = sorted((a, b))
        return f"derive({a},{op},{b})"
    if kind == ActionKind.WHERE:
        return f"where({vals['column']},{vals['operator']},{_token(vals['value'])})"
    if kind == ActionKind.GROUPBY:
        parts = []
        for s, v in bound:
            if s.startswith("agg:"):
                col = s.split(":", 1)[1]
                if v == "freq":
                    fv = vals.get(f"freqval:{col}")
                    parts.append(f"freq({col},{_token(fv)})")
                else:
                    parts.append(f"{v}({col})")
        return f"group({vals['grouper']};{','.join(parts)})"
    if kind == ActionKind.TREE:
        return f"tree({vals['target']},{vals['maxDepth']})"
    if kind == ActionKind.UNARY_OUTLIERS:
        return f"outliers({vals['column']})"
    if kind == ActionKind.BINARY_OUTLIERS:
        a, b = vals["pair"]
        return f"outliers({a},{b})"
    if kind == ActionKind.CLUSTERING:
        return f"cluster({vals['k']})"
    if kind == ActionKind.TREND:
        return f"trend({vals['datetime']},{vals['target']})"
    if kind == ActionKind.RULES:
        return "rules()"
    raise ActionError(f"unhandled kind {kind}")


def build_action(kind: ActionKind, bound: list) -> GroundAction:
    # commutative binops share one canonical form and one binding order
    if kind == ActionKind.BINOP:
        vals = {s: v for s, v in bound}
        if vals["operator"] in COMMUTATIVE_OPS:
            a, b = sorted((vals["left"], vals["right"]))
            bound = [("operator", vals["operator"]), ("left", a), ("right", b)]
    return GroundAction(kind=kind, bindings=tuple(bound), canonical=canonical_form(kind, bound))


# ---------------------------------------------------------------------------
# Precondition checking
# ---------------------------------------------------------------------------

def _where_mask(d: Dataset, col: Column, op: str, value) -> np.ndarray:
    n = d.n_rows
    mask = np.zeros(n, dtype=bool)
    for i, v in enumerate(col.values):
        if v is None:
            continue
        if op == "=":
            mask[i] = v == value
        elif op == "!=":
            mask[i] = v != value
        elif op == ">":
            mask[i] = v > value
        else:
            mask[i] = v < value
    return mask


def _derive_cells(d: Dataset, a: GroundAction) -> tuple:
    """Cells of the column a derive action would append."""
    if a.kind == ActionKind.DISCRETIZE:
        col = d.column(a.get("target"))
        method, arg = a.get("method"), a.get("arg")
        if method == "time":
            out = []
            for v in col.values:
                if v is None:
                    out.append(None)
                elif arg == "year":
                    out.append(v.year)
                elif arg == "quarter":
                    out.append((v.month - 1) // 3 + 1)
                elif arg == "month":
                    out.append(v.month)
                elif arg == "day":
                    out.append(v.day)
                elif arg == "hour":
                    out.append(v.hour)
                elif arg == "minute":
                    out.append(v.minute)
                else:
                    out.append(v.second)
            return tuple(out)
        enc = col.encoded()
        ok = ~np.isnan(enc)
        if not ok.any():
            return tuple([None] * len(enc))
        labels = np.full(len(enc), -1)
        if method == "bins":
            lo, hi = enc[ok].min(), enc[ok].max()
            if hi > lo:
                edges = np.linspace(lo, hi, arg + 1)
                labels[ok] = np.clip(np.digitize(enc[ok], edges[1:-1]), 0, arg - 1)
            else:
                labels[ok] = 0
        else:
            qs = np.quantile(enc[ok], np.linspace(0, 1, arg + 1))
            inner = np.unique(qs[1:-1])
            labels[ok] = np.searchsorted(inner, enc[ok], side="right")
        return tuple(int(l) if l >= 0 else None for l in labels)
    # binary operation
    op = a.get("operator")
    left, right = d.column(a.get("left")), d.column(a.get("right"))
    out = []
    for x, y in zip(left.values, right.values):
        if x is None or y is None:
            out.append(None)
        elif op == "+":
            out.append(x + y)
        elif op == "-":
            out.append(x - y)
        elif op == "*":
            out.append(x * y)
        elif op == "/":
            out.append(x / y if y != 0 else None)
        elif op == "=":
            out.append(x == y)
        elif op == "!=":
            out.append(x != y)
        elif op == ">":
            out.append(x > y)
        else:
            out.append(x < y)
    return tuple(out)


def _derived_column_name(d: Dataset, a: GroundAction) -> str:
    if a.kind == ActionKind.DISCRETIZE:
        method, arg = a.get("method"), a.get("arg")
        if method == "time":
            return f"{arg}({a.get('target')})"
        return f"{method}({a.get('target')},{arg})"
    return f"({a.get('left')}{a.get('operator')}{a.get('right')})"


def check_precondition(
    a: GroundAction,
    d: Dataset,
    path_forms: frozenset = frozenset(),
    child_forms: frozenset = frozenset(),
) -> Verdict:
    """Classify an instantiated action as ok / hard / qualitative / search fail."""
    # search preconditions first are cheapest
    if a.canonical in child_forms:
        return Verdict("search", "duplicate-child")
    if a.canonical in path_forms:
        return Verdict("search", "duplicate-on-path")

    if a.kind == ActionKind.SELECT:
        name = a.get("column")
        if d.has_column(name):
            return Verdict("hard", f"column {name!r} already present")
        if not any(c.name == name for c in d.select_pool):
            return Verdict("hard", f"column {name!r} not joinable")
        return OK
    if a.kind in (ActionKind.DISCRETIZE, ActionKind.BINOP):
        if a.kind == ActionKind.BINOP:
            lk = d.column(a.get("left")).kind
            rk = d.column(a.get("right")).kind
            if binop_result_kind(a.get("operator"), lk, rk) is None:
                return Verdict("hard", f"incompatible types {lk.value} {a.get('operator')} {rk.value}")
        name = _derived_column_name(d, a)
        if d.has_column(name):
            return Verdict("hard", f"column {name!r} already exists")
        cells = _derive_cells(d, a)
        non_null = {v for v in cells if v is not None}
        if len(non_null) == 0:
            return Verdict("qualitative", "derived column is all null")
        if len(non_null) == 1:
            return Verdict("qualitative", "derived column is constant")
        return OK
    if a.kind == ActionKind.WHERE:
        col = d.column(a.get("column"))
        if is_qualitative(col.kind) and a.get("operator") in (">", "<"):
            return Verdict("hard", "ordered comparison on qualitative column")
        mask = _where_mask(d, col, a.get("operator"), a.get("value"))
        kept = int(mask.sum())
        if kept == d.n_rows:
            return Verdict("qualitative", "filter removes no rows")
        if kept < MIN_ROWS:
            return Verdict("qualitative", f"filter keeps {kept} < {MIN_ROWS} rows")
        return OK
    if a.kind == ActionKind.GROUPBY:
        grouper = d.column(a.get("grouper"))
        groups = len(grouper.distinct())
        if groups < 2:
            return Verdict("qualitative", "fewer than 2 groups")
        return OK
    if a.kind == ActionKind.TREE:
        col = d.column(a.get("target"))
        if len(col.distinct()) < 2:
            return Verdict("hard", "constant target")
        if d.n_rows < 10:
            return Verdict("hard", "fewer than 10 rows")
        return OK
    if a.kind == ActionKind.BINARY_OUTLIERS:
        pa, pb = a.get("pair")
        if not d.pearson().is_valid(pa, pb):
            return Verdict("hard", "correlation entry invalid")
        return OK
    if a.kind == ActionKind.CLUSTERING:
        k = a.get("k")
        if d.n_rows < 2 * k:
            return Verdict("hard", f"need at least {2 * k} rows")
        if d.distinct_row_count(limit=k) < k:
            return Verdict("hard", f"fewer than {k} distinct rows")
        return OK
    return OK


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------

def instantiate(
    template: ActionTemplate,
    d: Dataset,
    policy: str,
    store: ParamStatsStore,
    rng: np.random.Generator,
    path_forms: frozenset = frozenset(),
    child_forms: frozenset = frozenset(),
    blocked: Optional[set] = None,
    uct_c: float = math.sqrt(2),
) -> Optional[GroundAction]:
    """Walk the parameter tree under ``policy`` until a valid action is found.

    Precondition failures exclude the offending binding and re-walk; ``None``
    signals exhaustion (the caller deactivates the template for this node).
    Permanently failing forms are accumulated in ``blocked`` when given so
    later calls skip them.
    """
    persistent = blocked if blocked is not None else set()
    call_blocked: set = set()

    def walk(bound: list) -> Optional[GroundAction]:
        slot = template.next_slot(bound)
        if slot is None:
            action = build_action(template.kind, bound)
            if action.canonical in persistent or action.canonical in call_blocked:
                return None
            return action
        name, candidates = slot
        remaining = list(candidates)
        while remaining:
            value = choose_value(remaining, policy, store, rng, uct_c)
            result = walk(bound + [(name, value)])
            if result is not None:
                return result
            remaining.remove(value)
        return None

    while True:
        action = walk([])
        if action is None:
            return None
        verdict = check_precondition(action, d, path_forms, child_forms)
        if verdict.ok:
            return action
        # path duplicates are transient (they depend on the traversal), all
        # other failures are permanent for this dataset
        if verdict.reason == "duplicate-on-path":
            call_blocked.add(action.canonical)
        else:
            persistent.add(action.canonical)


def enumerate_ground_actions(
    d: Dataset,
    path_forms: frozenset = frozenset(),
    kinds: Optional[Sequence[ActionKind]] = None,
) -> list:
    """All valid ground actions for a state; the exhaustive-search oracle."""
    out = []
    for template in enumerate_templates(d):
        if kinds is not None and template.kind not in kinds:
            continue

        def expand_paths(bound: list) -> list:
            slot = template.next_slot(bound)
            if slot is None:
                return [build_action(template.kind, bound)]
            name, candidates = slot
            paths = []
            for v in candidates:
                paths.extend(expand_paths(bound + [(name, v)]))
            return paths

        for action in expand_paths([]):
            if check_precondition(action, d, path_forms=path_forms).ok:
                if action not in out:
                    out.append(action)
    return out


# ---------------------------------------------------------------------------
# Data-action execution
# ---------------------------------------------------------------------------

def apply_data_action(d: Dataset, a: GroundAction) -> Dataset:
    """Execute a data action, extending the lineage with its canonical form."""
    verdict = check_precondition(a, d)
    if not verdict.ok:
        raise ActionError(f"{a.canonical}: {verdict.status} precondition: {verdict.reason}")
    lineage = d.lineage + (a.canonical,)
    if a.kind == ActionKind.SELECT:
        name = a.get("column")
        src = next(c for c in d.select_pool if c.name == name)
        if d.row_index is not None and len(d.row_index) != len(src.values):
            col = Column(
                name=src.name,
                kind=src.kind,
                values=tuple(src.values[i] for i in d.row_index),
                origin=src.origin,
                provenance=src.provenance,
                base_columns=src.base_columns,
            )
        else:
            col = src
        return Dataset(
            columns=d.columns + (col,),
            lineage=lineage,
            select_pool=d.select_pool,
            row_index=d.row_index,
        )
    if a.kind in (ActionKind.DISCRETIZE, ActionKind.BINOP):
        cells = _derive_cells(d, a)
        if a.kind == ActionKind.DISCRETIZE:
            kind = ColumnKind.CATEGORICAL
            bases = d.column(a.get("target")).base_columns
        else:
            kind = binop_result_kind(
                a.get("operator"),
                d.column(a.get("left")).kind,
                d.column(a.get("right")).kind,
            )
            bases = d.column(a.get("left")).base_columns | d.column(a.get("right")).base_columns
        col = Column(
            name=_derived_column_name(d, a),
            kind=kind,
            values=cells,
            origin="derived",
            provenance=a.canonical,
            base_columns=bases,
        )
        return Dataset(
            columns=d.columns + (col,),
            lineage=lineage,
            select_pool=d.select_pool,
            row_index=d.row_index,
        )
    if a.kind == ActionKind.WHERE:
        col = d.column(a.get("column"))
        mask = _where_mask(d, col, a.get("operator"), a.get("value"))
        idx = [i for i, keep in enumerate(mask) if keep]
        new_cols = tuple(
            Column(
                name=c.name,
                kind=c.kind,
                values=tuple(c.values[i] for i in idx),
                origin=c.origin,
                provenance=c.provenance,
                base_columns=c.base_columns,
            )
            for c in d.columns
        )
        row_index = (
            tuple(d.row_index[i] for i in idx) if d.row_index is not None else None
        )
        return Dataset(
            columns=new_cols, lineage=lineage, select_pool=d.select_pool, row_index=row_index
        )
    if a.kind == ActionKind.GROUPBY:
        grouper = d.column(a.get("grouper"))
        groups: dict = {}
        for i, v in enumerate(grouper.values):
            if v is not None:
                groups.setdefault(v, []).append(i)
        keys = list(groups)
        new_cols = [
            Column(
                name=grouper.name,
                kind=grouper.kind,
                values=tuple(keys),
                origin=grouper.origin,
                provenance=grouper.provenance,
                base_columns=grouper.base_columns,
            )
        ]
        for s, agg in a.bindings:
            if not s.startswith("agg:"):
                continue
            col = d.column(s.split(":", 1)[1])
            freq_value = None
            if agg == "freq":
                freq_value = a.get(f"freqval:{col.name}")
            cells = []
            for key in keys:
                members = [col.values[i] for i in groups[key] if col.values[i] is not None]
                cells.append(_aggregate(agg, col.kind, members, freq_value))
            if agg == "freq":
                name = f"freq({col.name},{_token(freq_value)})"
            else:
                name = f"{agg}({col.name})"
            new_cols.append(
                Column(
                    name=name,
                    kind=_agg_result_kind(agg, col.kind),
                    values=tuple(cells),
                    origin="derived",
                    provenance=a.canonical,
                    base_columns=col.base_columns,
                )
            )
        return Dataset(columns=tuple(new_cols), lineage=lineage, select_pool=(), row_index=None)
    raise ActionError(f"{a.canonical} is not a data action")


def canonical_state_key(d: Dataset, model_form: str = "") -> str:
    """Content fingerprint of a (dataset, model) state.

    Row order and column order do not contribute, so action orderings that
    produce the same table collide by construction.
    """
    h = hashlib.blake2b(d.content_digest(), digest_size=16)
    h.update(model_form.encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Canonical-form parsing (for lineage replay)
# ---------------------------------------------------------------------------

def _split_args(body: str) -> list:
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur or parts:
        parts.append("".join(cur))
    return parts


def _parse_value(token: str, col: Column):
    for v in col.distinct():
        if _token(v) == token:
            return v
    if col.kind == ColumnKind.NUMERICAL:
        return float(token)
    if col.kind == ColumnKind.DATETIME:
        return parse_datetime(token)
    if col.kind == ColumnKind.TIMEDELTA:
        return parse_timedelta(token)
    if col.kind == ColumnKind.BOOLEAN:
        return token == "true"
    return token


def parse_action(form: str, d: Dataset) -> GroundAction:
    """Parse a canonical action string in the context of the state it applies to."""
    if "(" not in form or not form.endswith(")"):
        raise ActionError(f"malformed action {form!r}")
    head, body = form.split("(", 1)
    body = body[:-1]
    if head == "select":
        return build_action(ActionKind.SELECT, [("column", body)])
    if head == "derive":
        args = _split_args(body)
        if len(args) != 3:
            raise ActionError(f"malformed derive {form!r}")
        if args[1] in ("bins", "quantiles", "time"):
            arg = args[2] if args[1] == "time" else int(args[2])
            return build_action(
                ActionKind.DISCRETIZE,
                [("target", args[0]), ("method", args[1]), ("arg", arg)],
            )
        return build_action(
            ActionKind.BINOP,
            [("operator", args[1]), ("left", args[0]), ("right", args[2])],
        )
    if head == "where":
        col_name, op, tok = _split_args(body)
        col = d.column(col_name)
        return build_action(
            ActionKind.WHERE,
            [("column", col_name), ("operator", op), ("value", _parse_value(tok, col))],
        )
    if head == "group":
        grouper, rest = body.split(";", 1)
        bound = [("grouper", grouper)]
        freq_slots = []
        for part in _split_args(rest):
            agg, inner = part.split("(", 1)
            inner = inner[:-1]
            if agg == "freq":
                col_name, tok = _split_args(inner)
                bound.append((f"agg:{col_name}", "freq"))
                freq_slots.append((col_name, tok))
            else:
                bound.append((f"agg:{inner}", agg))
        for col_name, tok in freq_slots:
            bound.append((f"freqval:{col_name}", _parse_value(tok, d.column(col_name))))
        return build_action(ActionKind.GROUPBY, bound)
    if head == "tree":
        target, depth = _split_args(body)
        return build_action(ActionKind.TREE, [("target", target), ("maxDepth", int(depth))])
    if head == "outliers":
        args = _split_args(body)
        if len(args) == 1:
            return build_action(ActionKind.UNARY_OUTLIERS, [("column", args[0])])
        return build_action(ActionKind.BINARY_OUTLIERS, [("pair", tuple(sorted(args)))])
    if head == "cluster":
        return build_action(ActionKind.CLUSTERING, [("k", int(body))])
    if head == "trend":
        dt, target = _split_args(body)
        return build_action(ActionKind.TREND, [("datetime", dt), ("target", target)])
    if head == "rules":
        return build_action(ActionKind.RULES, [])
    raise ActionError(f"unknown action kind in {form!r}")
