import pytest

from attrlogic.schema import (
    AttributeSchema,
    DuplicateAttributeError,
    GroupSizeError,
    SchemaSyntaxError,
    SelfReferenceError,
    UndeclaredAttributeError,
    fh37k_default,
    parse_schema,
    serialize_schema,
    validate_schema,
)

MINIMAL = """\
attrs a b
group g exclusive exhaustive : a b
"""


def test_minimal_document():
    schema = parse_schema(MINIMAL)
    assert schema.attributes == ("a", "b")
    assert schema.exclusion_rules == (("a", ("b",)), ("b", ("a",)))
    assert schema.exhaustive_groups == (("g", ("a", "b")),)


def test_undeclared_reference_names_attribute_and_line():
    doc = "attrs a b\nrequire a : c\n"
    with pytest.raises(UndeclaredAttributeError) as exc:
        parse_schema(doc)
    assert "'c'" in str(exc.value)
    assert exc.value.line == 2


def test_parse_is_deterministic():
    assert parse_schema(MINIMAL) == parse_schema(MINIMAL)


def test_comments_and_blank_lines_ignored():
    doc = "# header\n\nattrs a b  # trailing\ngroup g exhaustive : a b\n"
    schema = parse_schema(doc)
    assert schema.attributes == ("a", "b")
    assert schema.exclusion_rules == ()


def test_roundtrip_fh37k():
    schema = fh37k_default()
    assert parse_schema(serialize_schema(schema)) == schema


def test_roundtrip_handwritten_rules():
    doc = """\
schema demo
attrs a b c d
group g1 exclusive exhaustive : a b
require c : a d
exclude c : d
"""
    schema = parse_schema(doc)
    assert parse_schema(serialize_schema(schema)) == schema


class TestErrorClasses:
    def test_syntax_error_reports_position(self):
        with pytest.raises(SchemaSyntaxError) as exc:
            parse_schema("attrs a b\nfrobnicate a : b\n")
        assert exc.value.line == 2

    def test_duplicate_attribute(self):
        with pytest.raises(DuplicateAttributeError):
            parse_schema("attrs a b a\n")

    def test_undeclared_attribute(self):
        with pytest.raises(UndeclaredAttributeError):
            parse_schema("attrs a b\ngroup g exhaustive : a z\n")

    def test_self_referential_rule(self):
        with pytest.raises(SelfReferenceError):
            parse_schema("attrs a b\nexclude a : a b\n")

    def test_group_too_small(self):
        with pytest.raises(GroupSizeError):
            parse_schema("attrs a b\ngroup g exhaustive : a\n")

    def test_missing_separator(self):
        with pytest.raises(SchemaSyntaxError):
            parse_schema("attrs a b\nrequire a b\n")

    def test_group_without_flags(self):
        with pytest.raises(SchemaSyntaxError):
            parse_schema("attrs a b\ngroup g : a b\n")

    def test_empty_document(self):
        with pytest.raises(SchemaSyntaxError):
            parse_schema("# nothing here\n")


class TestFh37kDefault:
    def test_attribute_count(self):
        assert len(fh37k_default()) == 22

    def test_facial_hair_attribute_count_excluding_bald(self):
        schema = fh37k_default()
        bald = dict(schema.exhaustive_groups)["bald"]
        assert len(bald) == 5
        assert len(schema) - len(bald) == 17

    def test_clean_shaven_in_exactly_two_groups(self):
        schema = fh37k_default()
        containing = [name for name, members in schema.exhaustive_groups if "clean_shaven" in members]
        assert containing == ["beard_area", "beard_length"]

    def test_five_exhaustive_groups(self):
        assert len(fh37k_default().exhaustive_groups) == 5

    def test_validates_clean(self):
        assert validate_schema(fh37k_default()) == []

    def test_every_group_is_mutually_exclusive(self):
        schema = fh37k_default()
        exclusions = dict(schema.exclusion_rules)
        for _, members in schema.exhaustive_groups:
            for subj in members:
                for other in members:
                    if other != subj:
                        assert other in exclusions[subj]

    def test_connectedness_dependencies(self):
        deps = dict(fh37k_default().dependency_rules)
        assert deps["mustache_connected"] == ("chin_area", "side_to_side")
        assert deps["sideburns_connected"] == ("side_to_side",)
        for length in ("five_oclock_shadow", "short", "medium", "long"):
            assert deps[length] == ("chin_area", "side_to_side")
        assert "beard_length_nv" not in deps


def test_group_exclusions_are_symmetric():
    doc = "attrs a b c\ngroup g exclusive : a b c\n"
    exclusions = dict(parse_schema(doc).exclusion_rules)
    for subj, members in exclusions.items():
        for other in members:
            assert subj in exclusions[other]


class TestValidateSchema:
    def test_self_exclusion_violation(self):
        schema = AttributeSchema("bad", ("x", "y"), exclusion_rules=(("x", ("x",)),))
        report = validate_schema(schema)
        assert len(report) == 1 and "itself" in report[0]

    def test_group_size_violation(self):
        schema = AttributeSchema("bad", ("x", "y"), exhaustive_groups=(("g", ("x",)),))
        report = validate_schema(schema)
        assert len(report) == 1 and "fewer than 2" in report[0]

    def test_undeclared_in_rule(self):
        schema = AttributeSchema("bad", ("x",), dependency_rules=(("x", ("ghost",)),))
        assert any("ghost" in v for v in validate_schema(schema))

    def test_duplicate_attribute_name(self):
        schema = AttributeSchema("bad", ("x", "x"))
        assert any("duplicate" in v for v in validate_schema(schema))
