"""Operator catalog: loading, docstring DAG resolution, filtering, categories.

The catalog document is JSON, one record per operator, with fields
``name``, ``docstring``, ``references``, ``dtypes``, ``test_count``,
``tags`` and a top-level ``schema_version`` (see docs/catalog_schema.md).
Catalogs and their docstring DAGs are immutable after load and safe to
share across concurrent sessions.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .dtypes import SUPPORTED_DTYPES
from .errors import (
    CycleDetected,
    DanglingReference,
    DuplicateOperator,
    ParseError,
)

CATALOG_SCHEMA_VERSION = 1


class OperatorCategory(str, Enum):
    ELEMENTWISE = "Elementwise"
    DEEP_LEARNING = "DeepLearning"
    LINEAR_ALGEBRA = "LinearAlgebra"
    SHAPE_MANIPULATION = "ShapeManipulation"
    REDUCTION = "Reduction"
    INDEXING_SELECTION = "IndexingSelection"
    OTHER = "Other"


@dataclass(frozen=True)
class OperatorSpec:
    """One ATen-style operator as the harness sees it."""

    name: str
    docstring: str
    referenced_ops: tuple[str, ...] = ()
    dtypes: frozenset = frozenset()
    test_count: int = 0
    category: OperatorCategory = OperatorCategory.OTHER
    tags: frozenset = frozenset()

    def __post_init__(self):
        if not self.name:
            raise ParseError("operator name must be nonempty")
        extra = set(self.dtypes) - SUPPORTED_DTYPES
        if extra:
            raise ParseError(f"operator {self.name!r} has unsupported dtypes: {sorted(extra)}")
        if self.test_count < 0:
            raise ParseError(f"operator {self.name!r} has negative test_count")


@dataclass(frozen=True)
class DocstringDag:
    """Directed acyclic graph of operator docstrings.

    ``edges[a]`` lists the operators whose docstrings ``a`` references.
    Construction validates that every edge target exists and that no
    cycle exists; a violation raises at build time.
    """

    nodes: Mapping[str, str]
    edges: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        for src, targets in self.edges.items():
            if src not in self.nodes:
                raise DanglingReference(f"edge source {src!r} is not a node")
            for t in targets:
                if t not in self.nodes:
                    raise DanglingReference(f"{src!r} references unknown operator {t!r}")
        self._check_acyclic()

    def _check_acyclic(self):
        indeg = {n: 0 for n in self.nodes}
        for targets in self.edges.values():
            for t in targets:
                indeg[t] += 1
        ready = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            n = ready.pop()
            seen += 1
            for t in self.edges.get(n, ()):
                indeg[t] -= 1
                if indeg[t] == 0:
                    ready.append(t)
        if seen != len(self.nodes):
            cyclic = sorted(n for n, d in indeg.items() if d > 0)
            raise CycleDetected(f"docstring references form a cycle among: {cyclic}")

    def __contains__(self, name: str) -> bool:
        return name in self.nodes


@dataclass(frozen=True)
class FilterPolicy:
    """Platform-compatibility filter applied before a run."""

    max_test_count: int = 900
    exclude_tags: frozenset = frozenset({"complex", "random"})
    allowed_dtypes: frozenset = frozenset(SUPPORTED_DTYPES)

    def __post_init__(self):
        if self.max_test_count <= 0:
            raise ParseError("max_test_count must be positive")


@dataclass(frozen=True)
class OperatorCatalog:
    operators: tuple[OperatorSpec, ...]
    dag: DocstringDag
    schema_version: int = CATALOG_SCHEMA_VERSION
    _by_name: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {op.name: op for op in self.operators})

    def __len__(self) -> int:
        return len(self.operators)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> OperatorSpec:
        return self._by_name[name]

    def fingerprint(self) -> str:
        """Stable digest of the catalog contents, used to guard aggregation."""
        records = [
            {
                "name": op.name,
                "docstring": op.docstring,
                "references": list(op.referenced_ops),
                "dtypes": sorted(op.dtypes),
                "test_count": op.test_count,
                "tags": sorted(op.tags),
            }
            for op in sorted(self.operators, key=lambda o: o.name)
        ]
        blob = json.dumps(records, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# -- category rules ----------------------------------------------------------


@dataclass(frozen=True)
class CategoryRules:
    """Ordered keyword/prefix rule table; first match wins, default is total."""

    rules: tuple[tuple[str, str, OperatorCategory], ...]  # (kind, pattern, category)
    default: OperatorCategory = OperatorCategory.OTHER


def load_category_rules(source) -> CategoryRules:
    """Load a category rule table from a YAML document (path or text)."""
    doc = _read_document(source, loader="yaml")
    if not isinstance(doc, dict) or "rules" not in doc:
        raise ParseError("category rules document must have a 'rules' list")
    rules = []
    for entry in doc["rules"]:
        if not isinstance(entry, dict) or "category" not in entry:
            raise ParseError(f"bad category rule: {entry!r}")
        category = _parse_category(entry["category"])
        kinds = [k for k in ("prefix", "exact", "contains") if k in entry]
        if len(kinds) != 1:
            raise ParseError(f"category rule needs exactly one of prefix/exact/contains: {entry!r}")
        rules.append((kinds[0], str(entry[kinds[0]]), category))
    default = _parse_category(doc.get("default", "Other"))
    return CategoryRules(rules=tuple(rules), default=default)


def _parse_category(value: str) -> OperatorCategory:
    try:
        return OperatorCategory(value)
    except ValueError:
        raise ParseError(f"unknown operator category: {value!r}") from None


_DEFAULT_RULES = None


def default_category_rules() -> CategoryRules:
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        from importlib.resources import files

        text = files("opforge").joinpath("data/categories.yaml").read_text()
        _DEFAULT_RULES = load_category_rules(text)
    return _DEFAULT_RULES


def categorize(op_name: str, rules: CategoryRules | None = None) -> OperatorCategory:
    """Assign a category to an operator name. Deterministic; first rule wins."""
    rules = rules or default_category_rules()
    for kind, pattern, category in rules.rules:
        if kind == "prefix" and op_name.startswith(pattern):
            return category
        if kind == "exact" and op_name == pattern:
            return category
        if kind == "contains" and pattern in op_name:
            return category
    return rules.default


# -- loading -----------------------------------------------------------------


def _is_path_like(source) -> bool:
    if "\n" in source or len(source) > 512:
        return False
    try:
        return Path(source).exists()
    except OSError:
        return False


def _read_document(source, loader: str):
    if isinstance(source, dict):
        return source
    if isinstance(source, Path):
        text = source.read_text()
    elif isinstance(source, str) and _is_path_like(source):
        text = Path(source).read_text()
    else:
        text = source
    try:
        if loader == "json":
            return json.loads(text)
        return yaml.safe_load(text)
    except Exception as exc:
        raise ParseError(f"malformed document: {exc}") from exc


def load_catalog(source, rules: CategoryRules | None = None) -> OperatorCatalog:
    """Load and validate a catalog document (path, JSON text, or dict)."""
    doc = _read_document(source, loader="json")
    if not isinstance(doc, dict):
        raise ParseError("catalog document must be a JSON object")
    if doc.get("schema_version") != CATALOG_SCHEMA_VERSION:
        raise ParseError(f"unsupported catalog schema_version: {doc.get('schema_version')!r}")
    raw_ops = doc.get("operators")
    if not isinstance(raw_ops, list):
        raise ParseError("catalog document must have an 'operators' list")

    specs: list[OperatorSpec] = []
    seen: set[str] = set()
    for record in raw_ops:
        if not isinstance(record, dict) or "name" not in record:
            raise ParseError(f"bad operator record: {record!r}")
        name = record["name"]
        if name in seen:
            raise DuplicateOperator(f"duplicate operator name: {name!r}")
        seen.add(name)
        try:
            spec = OperatorSpec(
                name=name,
                docstring=record.get("docstring", ""),
                referenced_ops=tuple(record.get("references", ())),
                dtypes=frozenset(record.get("dtypes", ())),
                test_count=int(record.get("test_count", 0)),
                tags=frozenset(record.get("tags", ())),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad operator record {name!r}: {exc}") from exc
        specs.append(spec)

    for spec in specs:
        for ref in spec.referenced_ops:
            if ref not in seen:
                raise DanglingReference(
                    f"operator {spec.name!r} references {ref!r}, which is not in the catalog"
                )

    dag = DocstringDag(
        nodes={s.name: s.docstring for s in specs},
        edges={s.name: s.referenced_ops for s in specs},
    )
    specs = [replace(s, category=categorize(s.name, rules)) for s in specs]
    return OperatorCatalog(operators=tuple(specs), dag=dag)


# -- docstring resolution ------------------------------------------------------


def _reachable_order(root: str, dag: DocstringDag) -> list[str]:
    """Topological order of the subgraph reachable from root, lexicographic
    tie-break, root first."""
    reachable: set[str] = set()
    stack = [root]
    while stack:
        n = stack.pop()
        if n in reachable:
            continue
        reachable.add(n)
        stack.extend(dag.edges.get(n, ()))

    indeg = {n: 0 for n in reachable}
    for n in reachable:
        for t in dag.edges.get(n, ()):
            if t in reachable:
                indeg[t] += 1
    frontier = sorted(n for n, d in indeg.items() if d == 0)
    heapq.heapify(frontier)
    order: list[str] = []
    while frontier:
        n = heapq.heappop(frontier)
        order.append(n)
        for t in dag.edges.get(n, ()):
            if t in reachable:
                indeg[t] -= 1
                if indeg[t] == 0:
                    heapq.heappush(frontier, t)
    if len(order) != len(reachable):
        stuck = sorted(n for n in reachable if indeg.get(n, 0) > 0)
        raise CycleDetected(f"cycle among docstring references: {stuck}")
    return order


def resolve_docstring_parts(op: OperatorSpec, dag: DocstringDag) -> tuple[str, tuple[tuple[str, str], ...]]:
    """Return (own docstring, ((referenced op, docstring), ...)) with each
    transitively referenced docstring exactly once, topological order,
    lexicographic tie-break."""
    if op.name not in dag:
        raise DanglingReference(f"operator {op.name!r} is not in the docstring dag")
    order = _reachable_order(op.name, dag)
    assert order[0] == op.name
    supplemental = tuple((n, dag.nodes[n]) for n in order[1:])
    return dag.nodes[op.name], supplemental


def resolve_docstrings(op: OperatorSpec, dag: DocstringDag) -> str:
    """Concatenate the operator's docstring with all transitively referenced
    docstrings, each exactly once, in deterministic order."""
    own, supplemental = resolve_docstring_parts(op, dag)
    parts = [own] + [doc for _, doc in supplemental]
    return "\n\n".join(parts)


# -- filtering -----------------------------------------------------------------


def filter_operators(catalog, policy: FilterPolicy) -> list[OperatorSpec]:
    """Apply the platform-compatibility policy; stable order by name.

    Accepts a catalog or any iterable of specs. Idempotent: filtering an
    already filtered list changes nothing.
    """
    ops: Iterable[OperatorSpec]
    ops = catalog.operators if isinstance(catalog, OperatorCatalog) else catalog
    kept: list[OperatorSpec] = []
    for op in ops:
        if op.tags & policy.exclude_tags:
            continue
        if op.test_count >= policy.max_test_count:
            continue
        kept.append(replace(op, dtypes=frozenset(op.dtypes) & policy.allowed_dtypes))
    kept.sort(key=lambda o: o.name)
    return kept
