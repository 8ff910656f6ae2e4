from .ast import (
    COMPARISON_OPS,
    RESERVED_FIELDS,
    Annotation,
    Binding,
    Comparison,
    Duration,
    FieldRef,
    Predicate,
    QueryAst,
    SelectItem,
)
from .parser import check_semantics, parse_query, tokenize
from .printer import format_annotation, print_query

__all__ = [
    "COMPARISON_OPS",
    "RESERVED_FIELDS",
    "Annotation",
    "Binding",
    "Comparison",
    "Duration",
    "FieldRef",
    "Predicate",
    "QueryAst",
    "SelectItem",
    "check_semantics",
    "format_annotation",
    "parse_query",
    "print_query",
    "tokenize",
]
