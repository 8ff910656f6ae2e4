import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prisps.exceptions import ParseError, QueryError, SemanticError
from prisps.fixtures import BOB_QUERY, random_query_ast
from prisps.query import parse_query, print_query
from prisps.query.ast import Duration


def test_bob_query_structure():
    ast = parse_query(BOB_QUERY)
    assert ast.activity_steps == ("swallow", "drink", "lay down")
    assert ast.within == Duration(2, "min")
    assert ast.within.to_slots(60) == 2
    assert ast.insert_into == "TakeMedicinePattern"
    assert [i.output_name for i in ast.select] == ["ts", "cnt_swallow", "cnt_drink", "cnt_layd"]
    assert ast.has_count()
    assert ast.sink_publisher is None


def test_canonical_print_is_fixed_point():
    text = print_query(parse_query(BOB_QUERY))
    assert print_query(parse_query(text)) == text
    lines = text.splitlines()
    assert lines[0].startswith("define stream TakeMedicineStr")
    assert lines[1].startswith("from every e1=")
    assert lines[2].startswith("    -> e2=")
    assert lines[4] == "    within 2 min"


def test_parse_accepts_bytes_comments_and_upper_and():
    text = (
        "-- heading comment\n"
        "define stream S (x int);\n"
        "from every a=S[user_activity == 'p' AND x > 2] -> b=S[user_activity == 'q']\n"
        "select b.x insert into T;"
    )
    ast = parse_query(text.encode())
    assert len(ast.bindings[0].predicate.comparisons) == 2


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("define stream S (x int)\nfrom", 2, 1),
        ("define stream S (x int);\nfrom every a=S[x = 1] select a.x insert into T;", 2, 18),
    ],
)
def test_parse_error_positions(text, line, column):
    with pytest.raises(ParseError) as info:
        parse_query(text)
    assert (info.value.line, info.value.column) == (line, column)


@pytest.mark.parametrize(
    "text",
    [
        "define stream S (x int);\nfrom every a=T select a.x insert into O;",
        "define stream S (x int);\nfrom every a=S[y == 1] select a.x insert into O;",
        "define stream S (x int);\nfrom every a=S[x == 'one'] select a.x insert into O;",
        "define stream S (x int);\nfrom every a=S -> a=S select a.x insert into O;",
        "define stream S (x int);\ndefine stream S (y int);\nfrom every a=S select a.x insert into O;",
        "define stream S (x int);\nfrom every a=S within 0 min select a.x insert into O;",
    ],
)
def test_semantic_errors(text):
    with pytest.raises(SemanticError):
        parse_query(text)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_print_parse_round_trip(seed):
    ast = random_query_ast(seed)
    text = print_query(ast)
    assert parse_query(text) == ast
    assert print_query(parse_query(text)) == text


@settings(max_examples=500)
@given(st.text(max_size=200))
def test_parser_never_panics_on_arbitrary_text(text):
    try:
        parse_query(text)
    except QueryError:
        pass


@settings(max_examples=500)
@given(st.integers(0, len(BOB_QUERY)), st.integers(0, 40), st.text(max_size=5))
def test_parser_never_panics_on_mutated_query(pos, cut, insert):
    text = BOB_QUERY[:pos] + insert + BOB_QUERY[pos + cut :]
    try:
        parse_query(text)
    except QueryError:
        pass
