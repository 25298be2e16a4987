import pytest
from hypothesis import given, strategies as st

from schaladb import predicate as p


class TestMatching:
    def test_equality_on_strings(self):
        assert p.matches(p.parse("status = READY"), {"status": "READY"})
        assert not p.matches(p.parse("status = READY"), {"status": "RUNNING"})

    def test_numeric_comparisons(self):
        row = {"a": 0.55}
        assert p.matches(p.parse("a < 0.6"), row)
        assert not p.matches(p.parse("a > 0.6"), row)
        assert p.matches(p.parse("a >= 0.55"), row)
        assert p.matches(p.parse("a <= 0.55"), row)
        assert p.matches(p.parse("a != 1"), row)

    def test_and_or_precedence(self):
        pred = p.parse("a = 1 AND b = 2 OR c = 3")
        assert p.matches(pred, {"c": 3})
        assert p.matches(pred, {"a": 1, "b": 2})
        assert not p.matches(pred, {"a": 1, "c": 4})

    def test_parentheses(self):
        pred = p.parse("a = 1 AND (b = 2 OR c = 3)")
        assert not p.matches(pred, {"c": 3})
        assert p.matches(pred, {"a": 1, "c": 3})

    def test_in_lists(self):
        pred = p.parse("status in [READY, RUNNING]")
        assert p.matches(pred, {"status": "READY"})
        assert not p.matches(pred, {"status": "FINISHED"})

    def test_missing_field_never_matches(self):
        assert not p.matches(p.parse("ghost = 1"), {"a": 1})

    def test_none_values_never_order(self):
        assert not p.matches(p.parse("end_time < 5"), {"end_time": None})

    def test_null_literal(self):
        pred = p.from_json({"atom": ["raw", "!=", None]})
        assert p.matches(pred, {"raw": "/x"})
        assert not p.matches(pred, {"raw": None})

    def test_nested_fields_of_domain_tuples(self):
        pred = p.parse("a < 0.6")
        assert p.matches(pred, {"tuple_id": 1, "fields": {"a": 0.5}})

    def test_empty_predicate_matches_all(self):
        assert p.matches(p.TRUE, {"anything": 1})

    def test_quoted_strings(self):
        pred = p.parse("name = 'hello world'")
        assert p.matches(pred, {"name": "hello world"})


class TestParsingErrors:
    @pytest.mark.parametrize("bad", ["a <>", "a ~ 1", "a = 1 AND", "(a = 1", "a in 3"])
    def test_bad_input_raises(self, bad):
        with pytest.raises(p.PredicateError):
            p.parse(bad)


simple_fields = st.sampled_from(["a", "b", "status", "worker_id", "fl"])
literals = st.one_of(
    st.integers(min_value=-100, max_value=100),
    st.floats(min_value=-10, max_value=10, allow_nan=False).map(lambda f: round(f, 3)),
    st.text(alphabet="abcxyz_", min_size=1, max_size=6),
)
atoms = st.builds(
    p.Atom,
    field=simple_fields,
    op=st.sampled_from([o for o in p.OPS if o != "in"]),
    literal=literals,
)
in_atoms = st.builds(
    lambda f, lits: p.Atom(f, "in", tuple(lits)),
    simple_fields,
    st.lists(literals, min_size=1, max_size=3),
)
trees = st.recursive(
    st.one_of(atoms, in_atoms),
    lambda kids: st.one_of(
        st.builds(lambda parts: p.And(tuple(parts)), st.lists(kids, min_size=2, max_size=3)),
        st.builds(lambda parts: p.Or(tuple(parts)), st.lists(kids, min_size=2, max_size=3)),
    ),
    max_leaves=6,
)


class TestRoundTrips:
    @given(trees)
    def test_json_round_trip(self, tree):
        assert p.from_json(tree.to_json()) == tree

    @given(trees, st.dictionaries(simple_fields, literals, max_size=4))
    def test_text_round_trip_is_equivalent(self, tree, row):
        reparsed = p.parse(p.render(tree))
        assert p.matches(reparsed, row) == p.matches(tree, row)
