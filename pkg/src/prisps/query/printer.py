"""Canonical query printer (one clause per line, listing layout)."""

from __future__ import annotations

from .ast import Annotation, Binding, Comparison, QueryAst, SelectItem


def _quote(value: str) -> str:
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_literal(value) -> str:
    if isinstance(value, str):
        return _quote(value)
    return repr(value)


def format_annotation(ann: Annotation) -> str:
    params = ", ".join(f"{k}={_quote(v)}" for k, v in ann.params)
    return f"@{ann.name}({params})"


def _format_comparison(c: Comparison) -> str:
    return f"{c.field} {c.op} {format_literal(c.value)}"


def _format_binding(b: Binding) -> str:
    text = f"{b.name}={b.stream}"
    if b.predicate is not None:
        text += "[" + " and ".join(_format_comparison(c) for c in b.predicate.comparisons) + "]"
    return text


def _format_item(item: SelectItem) -> str:
    ref = f"{item.ref.binding}.{item.ref.field}"
    text = f"count({ref})" if item.aggregate == "count" else ref
    if item.alias is not None:
        text += f" as {item.alias}"
    return text


def print_query(ast: QueryAst) -> str:
    lines = [format_annotation(a) for a in ast.annotations]
    for schema in ast.stream_defs:
        fields = ", ".join(f"{n} {t}" for n, t in schema.fields)
        lines.append(f"define stream {schema.name} ({fields});")
    first, *rest = ast.bindings
    lines.append(f"from every {_format_binding(first)}")
    lines.extend(f"    -> {_format_binding(b)}" for b in rest)
    if ast.within is not None:
        lines.append(f"    within {ast.within.value} {ast.within.unit}")
    lines.append("select " + ", ".join(_format_item(i) for i in ast.select))
    lines.append(f"insert into {ast.insert_into};")
    return "\n".join(lines) + "\n"
