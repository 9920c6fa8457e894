"""Static analysis of candidate wrapper/kernel modules.

The candidate DSL is a Python-syntax subset. Parsing is fail-closed: any
construct outside the subset needed by kernel/wrapper code raises
``CandidateSyntaxError`` instead of being silently accepted. Comments never
reach the linter (the AST drops them), which matches the policy of stripping
rather than flagging them.

Rules, applied in order:
  structural            wrapper/kernel presence, JIT decorator on kernels
  forbidden_imports     no import statements
  module_restrictions   allowlisted dotted names per module (tl, torch, ...)
  module_scope_restrictions   e.g. tl.* only inside kernel* functions
  forbidden_tensor_methods    .cpu() / .cuda() style device moves
  forbidden_function_arguments  e.g. torch.device("cpu"|"cuda")
  forbidden_functions   eval / exec / compile
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import CandidateSyntaxError, ParseError, UnknownRule

log = logging.getLogger("opforge.lint")

RULE_IDS = (
    "syntax_error",
    "output_format",
    "forbidden_imports",
    "module_restrictions",
    "module_scope_restrictions",
    "forbidden_tensor_methods",
    "forbidden_function_arguments",
    "forbidden_functions",
)

LINT_CONFIG_SCHEMA_VERSION = 1

# Statement/expression node types the candidate subset admits. Anything else
# is rejected at parse time.
_ALLOWED_NODES = (
    ast.Module, ast.FunctionDef, ast.arguments, ast.arg, ast.Return,
    ast.Assign, ast.AugAssign, ast.AnnAssign, ast.For, ast.While, ast.If,
    ast.Raise, ast.Assert, ast.Pass, ast.Break, ast.Continue, ast.Expr,
    ast.Import, ast.ImportFrom, ast.alias,
    ast.BoolOp, ast.BinOp, ast.UnaryOp, ast.IfExp, ast.Compare, ast.Call,
    ast.Attribute, ast.Subscript, ast.Name, ast.Constant, ast.Tuple,
    ast.List, ast.Dict, ast.Set, ast.Slice, ast.JoinedStr,
    ast.FormattedValue, ast.Starred, ast.keyword,
    ast.Load, ast.Store, ast.Del,
    ast.And, ast.Or, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv,
    ast.Mod, ast.Pow, ast.LShift, ast.RShift, ast.BitOr, ast.BitXor,
    ast.BitAnd, ast.MatMult, ast.UAdd, ast.USub, ast.Not, ast.Invert,
    ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Is, ast.IsNot,
    ast.In, ast.NotIn,
)


@dataclass(frozen=True)
class DottedUse:
    """One use of a dotted name (maximal attribute chain rooted at a Name)."""

    path: str
    line: int


@dataclass(frozen=True)
class CallRecord:
    path: str | None          # dotted callee, e.g. "tl.load", "eval", "input.cpu"
    method_name: str | None   # attribute name when callee is x.<attr>(...)
    rooted_in_name: bool      # callee chain bottoms out in a bare Name
    string_args: tuple[str, ...]
    line: int


@dataclass(frozen=True)
class ImportRecord:
    rendered: str
    line: int


@dataclass(frozen=True)
class FunctionNode:
    name: str
    line: int
    params: tuple[str, ...]
    decorators: tuple[str, ...]
    calls: tuple[CallRecord, ...]
    uses: tuple[DottedUse, ...]


@dataclass(frozen=True)
class SyntaxTree:
    functions: tuple[FunctionNode, ...]
    top_level_calls: tuple[CallRecord, ...]
    top_level_uses: tuple[DottedUse, ...]
    imports: tuple[ImportRecord, ...]
    source: str

    def function_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.functions)


def _dotted_path(node: ast.AST) -> tuple[str | None, bool]:
    """Resolve an attribute chain to a dotted path.

    Returns (path, rooted_in_name). path is None when the chain does not
    bottom out in a plain Name (e.g. a call or subscript in the chain).
    """
    parts: list[str] = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
        return ".".join(reversed(parts)), True
    return None, False


class _Collector(ast.NodeVisitor):
    def __init__(self):
        self.calls: list[CallRecord] = []
        self.uses: list[DottedUse] = []

    def visit_Attribute(self, node: ast.Attribute):
        path, rooted = _dotted_path(node)
        if rooted:
            self.uses.append(DottedUse(path=path, line=node.lineno))
            # Do not descend: the chain is fully captured.
            return
        # Chain interrupted by a call/subscript: record nothing for the
        # outer attribute, keep walking the interrupting value.
        self.visit(node.value)

    def visit_Name(self, node: ast.Name):
        self.uses.append(DottedUse(path=node.id, line=node.lineno))

    def visit_Call(self, node: ast.Call):
        path, rooted = _dotted_path(node.func)
        method = node.func.attr if isinstance(node.func, ast.Attribute) else None
        string_args = []
        for arg in list(node.args) + [kw.value for kw in node.keywords]:
            if isinstance(arg, ast.Constant) and isinstance(arg.value, str):
                string_args.append(arg.value)
        self.calls.append(
            CallRecord(
                path=path,
                method_name=method,
                rooted_in_name=rooted,
                string_args=tuple(string_args),
                line=node.lineno,
            )
        )
        self.generic_visit(node)


def _check_subset(tree: ast.AST):
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            line = getattr(node, "lineno", 1)
            raise CandidateSyntaxError(
                f"unsupported construct {type(node).__name__} at line {line}", line=line
            )


def parse_candidate(source: str) -> SyntaxTree:
    """Parse candidate source into a SyntaxTree, failing closed."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise CandidateSyntaxError(str(exc.msg), line=exc.lineno or 1) from exc
    _check_subset(tree)

    functions: list[FunctionNode] = []
    top = _Collector()
    imports: list[ImportRecord] = []

    for node in tree.body:
        if isinstance(node, ast.FunctionDef):
            fn = _Collector()
            for stmt in node.body:
                fn.visit(stmt)
            # Attribute param annotations and defaults to the function's
            # scope: tl.constexpr annotations live in kernel signatures.
            for arg in _all_args(node.args):
                if arg.annotation is not None:
                    fn.visit(arg.annotation)
            for default in list(node.args.defaults) + [
                d for d in node.args.kw_defaults if d is not None
            ]:
                fn.visit(default)
            decorators = []
            for dec in node.decorator_list:
                path, rooted = _dotted_path(dec.func if isinstance(dec, ast.Call) else dec)
                decorators.append(path if rooted else "<dynamic>")
                fn.visit(dec)
            functions.append(
                FunctionNode(
                    name=node.name,
                    line=node.lineno,
                    params=tuple(a.arg for a in _all_args(node.args)),
                    decorators=tuple(decorators),
                    calls=tuple(fn.calls),
                    uses=tuple(fn.uses),
                )
            )
        elif isinstance(node, (ast.Import, ast.ImportFrom)):
            imports.append(
                ImportRecord(rendered=ast.unparse(node), line=node.lineno)
            )
        else:
            top.visit(node)

    return SyntaxTree(
        functions=tuple(functions),
        top_level_calls=tuple(top.calls),
        top_level_uses=tuple(top.uses),
        imports=tuple(imports),
        source=source,
    )


def _all_args(args: ast.arguments) -> list[ast.arg]:
    out = list(args.posonlyargs) + list(args.args) + list(args.kwonlyargs)
    if args.vararg:
        out.append(args.vararg)
    if args.kwarg:
        out.append(args.kwarg)
    return out


# -- config -------------------------------------------------------------------


@dataclass(frozen=True)
class StructuralRules:
    enabled: bool = True
    require_wrapper: bool = True
    kernel_name_prefix: str = "kernel"
    require_jit_decorator: bool = True
    jit_decorator: str = "triton.jit"
    forbid_imports: bool = True


@dataclass(frozen=True)
class LintConfig:
    module_allowlists: dict = field(default_factory=dict)        # module -> frozenset(paths)
    scope_restrictions: dict = field(default_factory=dict)       # module -> (patterns,)
    forbidden_tensor_methods: frozenset = frozenset()
    forbidden_function_args: dict = field(default_factory=dict)  # function -> frozenset(args)
    forbidden_builtins: frozenset = frozenset()
    structural: StructuralRules = StructuralRules()

    def __post_init__(self):
        for module, patterns in self.scope_restrictions.items():
            for pat in patterns:
                try:
                    re.compile(pat)
                except re.error as exc:
                    raise ParseError(f"bad scope pattern for {module!r}: {exc}") from exc


_KNOWN_RULE_KEYS = {
    "schema_version",
    "module_restrictions",
    "module_scope_restrictions",
    "forbidden_tensor_methods",
    "forbidden_function_arguments",
    "forbidden_functions",
    "structural",
}


def load_lint_config(source) -> LintConfig:
    """Load a lint config document (YAML path or text) mirroring the rule
    blocks shipped in data/default_lint.yaml."""
    from .catalog import _is_path_like

    if isinstance(source, Path) or (isinstance(source, str) and _is_path_like(source)):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        raise ParseError(f"unsupported lint config source: {type(source).__name__}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed lint config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("lint config must be a mapping of rule blocks")

    unknown = set(doc) - _KNOWN_RULE_KEYS
    if unknown:
        raise UnknownRule(f"unknown lint rule(s): {sorted(unknown)}")

    def block(name):
        b = doc.get(name)
        if b is None:
            return None
        if not isinstance(b, dict):
            raise ParseError(f"rule block {name!r} must be a mapping")
        if not b.get("enabled", True):
            return None
        return b

    module_allowlists: dict[str, frozenset] = {}
    b = block("module_restrictions")
    if b is not None:
        for entry in _require(b, "modules", list, "module_restrictions"):
            mod = entry.get("module_name")
            funcs = entry.get("allowed_functions")
            if not mod or not funcs:
                raise ParseError("module_restrictions entries need module_name and a nonempty allowed_functions list")
            module_allowlists[mod] = frozenset(funcs)

    scope_restrictions: dict[str, tuple] = {}
    b = block("module_scope_restrictions")
    if b is not None:
        for entry in _require(b, "restrictions", list, "module_scope_restrictions"):
            mod = entry.get("module")
            pats = entry.get("allowed_scope_patterns")
            if not mod or not pats:
                raise ParseError("module_scope_restrictions entries need module and nonempty allowed_scope_patterns")
            scope_restrictions[mod] = tuple(pats)

    forbidden_methods = frozenset()
    b = block("forbidden_tensor_methods")
    if b is not None:
        methods = _require(b, "forbidden_methods", list, "forbidden_tensor_methods")
        if not methods:
            raise ParseError("forbidden_tensor_methods enabled with an empty set")
        forbidden_methods = frozenset(methods)

    forbidden_function_args: dict[str, frozenset] = {}
    b = block("forbidden_function_arguments")
    if b is not None:
        for entry in _require(b, "restrictions", list, "forbidden_function_arguments"):
            func = entry.get("function")
            args = entry.get("forbidden_string_args")
            if not func or not args:
                raise ParseError("forbidden_function_arguments entries need function and nonempty forbidden_string_args")
            forbidden_function_args[func] = frozenset(args)

    forbidden_builtins = frozenset()
    b = block("forbidden_functions")
    if b is not None:
        names = _require(b, "forbidden_functions", list, "forbidden_functions")
        if not names:
            raise ParseError("forbidden_functions enabled with an empty set")
        forbidden_builtins = frozenset(names)

    structural = StructuralRules(enabled=False)
    b = block("structural")
    if b is not None:
        structural = StructuralRules(
            enabled=True,
            require_wrapper=bool(b.get("require_wrapper", True)),
            kernel_name_prefix=str(b.get("kernel_name_prefix", "kernel")),
            require_jit_decorator=bool(b.get("require_jit_decorator", True)),
            jit_decorator=str(b.get("jit_decorator", "triton.jit")),
            forbid_imports=bool(b.get("forbid_imports", True)),
        )

    return LintConfig(
        module_allowlists=module_allowlists,
        scope_restrictions=scope_restrictions,
        forbidden_tensor_methods=forbidden_methods,
        forbidden_function_args=forbidden_function_args,
        forbidden_builtins=forbidden_builtins,
        structural=structural,
    )


def _require(block: dict, key: str, typ, rule: str):
    value = block.get(key)
    if not isinstance(value, typ):
        raise ParseError(f"rule {rule!r} needs a {typ.__name__} under {key!r}")
    return value


_DEFAULT_CONFIG: LintConfig | None = None


def default_lint_config() -> LintConfig:
    global _DEFAULT_CONFIG
    if _DEFAULT_CONFIG is None:
        from importlib.resources import files

        _DEFAULT_CONFIG = load_lint_config(
            files("opforge").joinpath("data/default_lint.yaml").read_text()
        )
    return _DEFAULT_CONFIG


# -- report -------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule_id: str
    message: str
    line: int
    details: str = ""

    def to_json(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "message": self.message,
            "line": self.line,
            "details": self.details,
        }


@dataclass(frozen=True)
class LintReport:
    violations: tuple[Violation, ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {"pass": self.passed, "violations": [v.to_json() for v in self.violations]}

    def render(self) -> str:
        """The rendering embedded in lint feedback prompts."""
        lines = [f"Found {len(self.violations)} linting violation(s):"]
        for v in self.violations:
            lines.append(f"[{v.rule_id}] {v.message} (line {v.line})")
            if v.details:
                lines.append(f"Details: {v.details}")
        return "\n".join(lines)

    @staticmethod
    def syntax_failure(exc: CandidateSyntaxError) -> "LintReport":
        """Wrap a parse failure as a lint-stage report for LLM feedback."""
        return LintReport(
            violations=(
                Violation(
                    rule_id="syntax_error",
                    message=f"Candidate source failed to parse: {exc}",
                    line=exc.line,
                ),
            )
        )


# -- rules --------------------------------------------------------------------


def lint(tree: SyntaxTree, config: LintConfig | None = None) -> LintReport:
    """Apply every enabled rule to the tree. Violations are data, not errors."""
    config = config or default_lint_config()
    violations: list[Violation] = []
    violations += _structural_rule(tree, config.structural)
    violations += _imports_rule(tree, config.structural)
    violations += _module_allowlist_rule(tree, config)
    violations += _scope_rule(tree, config)
    violations += _forbidden_methods_rule(tree, config)
    violations += _forbidden_args_rule(tree, config)
    violations += _forbidden_builtins_rule(tree, config)
    return LintReport(violations=tuple(violations))


def _structural_rule(tree: SyntaxTree, rules: StructuralRules) -> list[Violation]:
    if not rules.enabled:
        return []
    out: list[Violation] = []
    wrappers = [f for f in tree.functions if f.name == "wrapper"]
    if rules.require_wrapper and len(wrappers) != 1:
        out.append(
            Violation(
                rule_id="output_format",
                message=(
                    "Expected exactly one function named \"wrapper\", found "
                    f"{len(wrappers)}"
                ),
                line=wrappers[1].line if len(wrappers) > 1 else 1,
            )
        )
    kernels = [f for f in tree.functions if f.name.startswith(rules.kernel_name_prefix)]
    if not kernels:
        out.append(
            Violation(
                rule_id="output_format",
                message=(
                    "Expected at least one kernel function whose name starts "
                    f"with \"{rules.kernel_name_prefix}\""
                ),
                line=1,
            )
        )
    if rules.require_jit_decorator:
        for k in kernels:
            if rules.jit_decorator not in k.decorators:
                out.append(
                    Violation(
                        rule_id="output_format",
                        message=(
                            f"Kernel function \"{k.name}\" must carry the "
                            f"@{rules.jit_decorator} decorator"
                        ),
                        line=k.line,
                    )
                )
    return out


def _imports_rule(tree: SyntaxTree, rules: StructuralRules) -> list[Violation]:
    if not (rules.enabled and rules.forbid_imports):
        return []
    return [
        Violation(
            rule_id="forbidden_imports",
            message=f"Import statements are not allowed: {imp.rendered}",
            line=imp.line,
            details="Required imports are provided by the execution harness",
        )
        for imp in tree.imports
    ]


def _iter_scopes(tree: SyntaxTree):
    yield None, tree.top_level_calls, tree.top_level_uses
    for f in tree.functions:
        yield f.name, f.calls, f.uses


def _module_allowlist_rule(tree: SyntaxTree, config: LintConfig) -> list[Violation]:
    out: list[Violation] = []
    seen: set[tuple[str, int]] = set()
    for _scope, _calls, uses in _iter_scopes(tree):
        for use in uses:
            root = use.path.split(".", 1)[0]
            allow = config.module_allowlists.get(root)
            if allow is None or "." not in use.path:
                continue
            if use.path in allow:
                continue
            key = (use.path, use.line)
            if key in seen:
                continue
            seen.add(key)
            out.append(
                Violation(
                    rule_id="module_restrictions",
                    message=f"Forbidden {root} module usage: {use.path}",
                    line=use.line,
                    details=f"Allowed {root} functions: " + ", ".join(sorted(allow)),
                )
            )
    return sorted(out, key=lambda v: v.line)


def _scope_rule(tree: SyntaxTree, config: LintConfig) -> list[Violation]:
    out: list[Violation] = []
    seen: set[tuple[str, int]] = set()
    for scope, _calls, uses in _iter_scopes(tree):
        for module, patterns in config.scope_restrictions.items():
            allowed = scope is not None and any(re.match(p, scope) for p in patterns)
            if allowed:
                continue
            for use in uses:
                if use.path.split(".", 1)[0] != module or "." not in use.path:
                    continue
                key = (use.path, use.line)
                if key in seen:
                    continue
                seen.add(key)
                where = f'function "{scope}"' if scope else "module level"
                out.append(
                    Violation(
                        rule_id="module_scope_restrictions",
                        message=f"{use.path} used outside an allowed scope ({where})",
                        line=use.line,
                        details=f"Allowed scopes for {module}: " + ", ".join(patterns),
                    )
                )
    return sorted(out, key=lambda v: v.line)


def _forbidden_methods_rule(tree: SyntaxTree, config: LintConfig) -> list[Violation]:
    if not config.forbidden_tensor_methods:
        return []
    out: list[Violation] = []
    for _scope, calls, _uses in _iter_scopes(tree):
        for call in calls:
            if call.method_name not in config.forbidden_tensor_methods:
                continue
            root = call.path.split(".", 1)[0] if call.path else None
            if root in config.module_allowlists:
                continue  # module-rooted paths are the allowlist rule's business
            shown = call.path or f"<expression>.{call.method_name}"
            out.append(
                Violation(
                    rule_id="forbidden_tensor_methods",
                    message=f"Forbidden tensor method call: {shown}()",
                    line=call.line,
                    details="Tensor methods that move data between devices are prohibited",
                )
            )
    return sorted(out, key=lambda v: v.line)


def _forbidden_args_rule(tree: SyntaxTree, config: LintConfig) -> list[Violation]:
    out: list[Violation] = []
    for _scope, calls, _uses in _iter_scopes(tree):
        for call in calls:
            if call.path is None:
                continue
            forbidden = config.forbidden_function_args.get(call.path)
            if forbidden is None:
                continue
            if call.path == "torch.device" and not call.string_args:
                log.warning(
                    "torch.device called with a non-literal argument at line %d; "
                    "string-argument rule matches literals only",
                    call.line,
                )
            for arg in call.string_args:
                if arg in forbidden:
                    out.append(
                        Violation(
                            rule_id="forbidden_function_arguments",
                            message=f"Forbidden argument \"{arg}\" in call to {call.path}",
                            line=call.line,
                            details=f"Prohibited string arguments for {call.path}: "
                            + ", ".join(sorted(forbidden)),
                        )
                    )
    return sorted(out, key=lambda v: v.line)


def _forbidden_builtins_rule(tree: SyntaxTree, config: LintConfig) -> list[Violation]:
    if not config.forbidden_builtins:
        return []
    out: list[Violation] = []
    for _scope, calls, _uses in _iter_scopes(tree):
        for call in calls:
            if call.path in config.forbidden_builtins:
                out.append(
                    Violation(
                        rule_id="forbidden_functions",
                        message=f"Forbidden function call: {call.path}",
                        line=call.line,
                        details="Built-in functions that enable dynamic code execution are prohibited",
                    )
                )
    return sorted(out, key=lambda v: v.line)
