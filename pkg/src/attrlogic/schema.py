"""Attribute universe, logical constraints, and the constraint DSL.

An AttributeSchema declares an ordered attribute list plus three kinds of
constraints over single prediction rows:

  * exclusion rules   -- (subject, [attrs that may not co-occur with it])
  * dependency rules  -- (subject, [attrs of which >= 1 must be positive
                          whenever the subject is positive])
  * exhaustive groups -- named attribute lists of which >= 1 member must be
                         positive in every row

Schemas are parsed from a line-oriented UTF-8 DSL (``#`` starts a comment):

    schema fh37k
    attrs clean_shaven chin_area side_to_side beard_area_nv
    group beard_area exclusive exhaustive : clean_shaven chin_area side_to_side beard_area_nv
    require mustache_connected : chin_area side_to_side
    exclude clean_shaven : mustache_connected

A ``group ... exclusive`` declaration expands into symmetric per-subject
exclusion rules so group-derived and hand-written exclusions share one
evaluation path.  Schemas are immutable after construction and safe to share
across threads.
"""

from dataclasses import dataclass, field

from .errors import AttrLogicError

__all__ = [
    "AttributeSchema",
    "SchemaParseError",
    "SchemaSyntaxError",
    "DuplicateAttributeError",
    "UndeclaredAttributeError",
    "SelfReferenceError",
    "GroupSizeError",
    "parse_schema",
    "serialize_schema",
    "validate_schema",
    "fh37k_default",
]


class SchemaParseError(AttrLogicError):
    """Base class for constraint-DSL parse failures."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class SchemaSyntaxError(SchemaParseError):
    """Malformed line: unknown directive, missing separator, bad flag, ..."""


class DuplicateAttributeError(SchemaParseError):
    """The same attribute name was declared twice."""


class UndeclaredAttributeError(SchemaParseError):
    """A rule or group references an attribute that was never declared."""


class SelfReferenceError(SchemaParseError):
    """A rule lists its own subject in its attribute list."""


class GroupSizeError(SchemaParseError):
    """A group declaration has fewer than two members."""


@dataclass(frozen=True)
class AttributeSchema:
    """Immutable attribute universe plus its logical constraints.

    ``attributes`` order defines the column index of every matrix that is
    used together with the schema.  ``exclusion_rules`` and
    ``dependency_rules`` map a subject attribute to a tuple of attribute
    names; ``exhaustive_groups`` maps a group name to its member tuple,
    in declaration order.
    """

    name: str
    attributes: tuple[str, ...]
    exclusion_rules: tuple[tuple[str, tuple[str, ...]], ...] = ()
    dependency_rules: tuple[tuple[str, tuple[str, ...]], ...] = ()
    exhaustive_groups: tuple[tuple[str, tuple[str, ...]], ...] = ()
    _index: dict = field(init=False, repr=False, compare=False, hash=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.attributes)})

    def __len__(self) -> int:
        return len(self.attributes)

    def index_of(self, attribute: str) -> int:
        return self._index[attribute]

    def exclusion_indices(self) -> list[tuple[int, list[int]]]:
        """Exclusion rules as (subject index, member index list)."""
        return [
            (self._index[subj], [self._index[a] for a in members])
            for subj, members in self.exclusion_rules
        ]

    def dependency_indices(self) -> list[tuple[int, list[int]]]:
        """Dependency rules as (subject index, member index list)."""
        return [
            (self._index[subj], [self._index[a] for a in members])
            for subj, members in self.dependency_rules
        ]

    def group_indices(self) -> list[tuple[str, list[int]]]:
        """Exhaustive groups as (name, member index list)."""
        return [
            (name, [self._index[a] for a in members])
            for name, members in self.exhaustive_groups
        ]


_IDENT_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def _check_identifier(token: str, line_no: int, column: int):
    if not token or token[0].isdigit() or any(c not in _IDENT_OK for c in token):
        raise SchemaSyntaxError(f"invalid identifier {token!r}", line_no, column)


class _Builder:
    """Accumulates declarations while parsing, then freezes a schema."""

    def __init__(self):
        self.name = "unnamed"
        self.attributes: list[str] = []
        self.seen: set[str] = set()
        self.exclusions: dict[str, list[str]] = {}
        self.dependencies: dict[str, list[str]] = {}
        self.groups: list[tuple[str, list[str]]] = []
        self.group_names: set[str] = set()

    def declare(self, attr: str, line_no: int, column: int):
        _check_identifier(attr, line_no, column)
        if attr in self.seen:
            raise DuplicateAttributeError(f"attribute {attr!r} declared twice", line_no, column)
        self.seen.add(attr)
        self.attributes.append(attr)

    def resolve(self, attr: str, line_no: int, column: int) -> str:
        if attr not in self.seen:
            raise UndeclaredAttributeError(f"reference to undeclared attribute {attr!r}", line_no, column)
        return attr

    def add_exclusions(self, subject: str, members: list[str], line_no: int):
        if subject in members:
            raise SelfReferenceError(f"attribute {subject!r} excludes itself", line_no)
        bucket = self.exclusions.setdefault(subject, [])
        for m in members:
            if m not in bucket:
                bucket.append(m)

    def add_dependency(self, subject: str, members: list[str], line_no: int):
        if subject in members:
            raise SelfReferenceError(f"attribute {subject!r} depends on itself", line_no)
        bucket = self.dependencies.setdefault(subject, [])
        for m in members:
            if m not in bucket:
                bucket.append(m)

    def build(self) -> "AttributeSchema":
        # Per-subject rule order follows attribute declaration order so that
        # the canonical form is independent of the order rules appeared in.
        order = {a: i for i, a in enumerate(self.attributes)}
        exclusion_rules = tuple(
            (subj, tuple(sorted(self.exclusions[subj], key=order.get)))
            for subj in self.attributes
            if subj in self.exclusions
        )
        dependency_rules = tuple(
            (subj, tuple(self.dependencies[subj]))
            for subj in self.attributes
            if subj in self.dependencies
        )
        groups = tuple((name, tuple(members)) for name, members in self.groups)
        return AttributeSchema(
            name=self.name,
            attributes=tuple(self.attributes),
            exclusion_rules=exclusion_rules,
            dependency_rules=dependency_rules,
            exhaustive_groups=groups,
        )


def _split_rule(body: str, line_no: int) -> tuple[str, list[str]]:
    if ":" not in body:
        raise SchemaSyntaxError("expected ':' separating subject and attribute list", line_no)
    head, _, tail = body.partition(":")
    subject = head.split()
    members = tail.split()
    if len(subject) != 1:
        raise SchemaSyntaxError("expected exactly one subject before ':'", line_no)
    if not members:
        raise SchemaSyntaxError("expected at least one attribute after ':'", line_no)
    return subject[0], members


def parse_schema(source: str) -> AttributeSchema:
    """Parse a constraint-DSL document into an AttributeSchema.

    Raises a SchemaParseError subclass on the first problem found: malformed
    syntax (with line/column), duplicate attribute, reference to an
    undeclared attribute, a self-referential rule, or a group with fewer
    than two members.
    """
    builder = _Builder()
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        directive, _, body = line.partition(" ")
        body = body.strip()

        if directive == "schema":
            if len(body.split()) != 1:
                raise SchemaSyntaxError("expected a single schema name", line_no)
            _check_identifier(body, line_no, raw.find(body) + 1)
            builder.name = body

        elif directive == "attrs":
            names = body.split()
            if not names:
                raise SchemaSyntaxError("empty attrs declaration", line_no)
            for name in names:
                builder.declare(name, line_no, raw.find(name) + 1)

        elif directive == "group":
            if ":" not in body:
                raise SchemaSyntaxError("expected ':' separating group header and members", line_no)
            head, _, tail = body.partition(":")
            head_tokens = head.split()
            if not head_tokens:
                raise SchemaSyntaxError("missing group name", line_no)
            group_name, flags = head_tokens[0], head_tokens[1:]
            _check_identifier(group_name, line_no, raw.find(group_name) + 1)
            if not flags or any(f not in ("exclusive", "exhaustive") for f in flags):
                raise SchemaSyntaxError(
                    "group flags must be one or both of 'exclusive' and 'exhaustive'", line_no
                )
            members = [builder.resolve(m, line_no, raw.find(m) + 1) for m in tail.split()]
            if len(members) < 2:
                raise GroupSizeError(f"group {group_name!r} has fewer than 2 members", line_no)
            if len(set(members)) != len(members):
                raise SchemaSyntaxError(f"group {group_name!r} lists a member twice", line_no)
            if "exclusive" in flags:
                for subj in members:
                    builder.add_exclusions(subj, [m for m in members if m != subj], line_no)
            if "exhaustive" in flags:
                if group_name in builder.group_names:
                    raise SchemaSyntaxError(f"duplicate group name {group_name!r}", line_no)
                builder.group_names.add(group_name)
                builder.groups.append((group_name, members))

        elif directive == "exclude":
            subject, members = _split_rule(body, line_no)
            subject = builder.resolve(subject, line_no, raw.find(subject) + 1)
            members = [builder.resolve(m, line_no, raw.find(m) + 1) for m in members]
            builder.add_exclusions(subject, members, line_no)

        elif directive == "require":
            subject, members = _split_rule(body, line_no)
            subject = builder.resolve(subject, line_no, raw.find(subject) + 1)
            members = [builder.resolve(m, line_no, raw.find(m) + 1) for m in members]
            builder.add_dependency(subject, members, line_no)

        else:
            raise SchemaSyntaxError(f"unknown directive {directive!r}", line_no, 1)

    if not builder.attributes:
        raise SchemaSyntaxError("document declares no attributes", 1)
    return builder.build()


def serialize_schema(schema: AttributeSchema) -> str:
    """Render a schema back to canonical DSL text.

    Exhaustive groups are written with the ``exhaustive`` flag only and the
    (already symmetric) exclusion rules are written explicitly, so
    ``parse_schema(serialize_schema(s))`` reproduces ``s`` exactly.
    """
    lines = [f"schema {schema.name}"]
    lines.append("attrs " + " ".join(schema.attributes))
    for name, members in schema.exhaustive_groups:
        lines.append(f"group {name} exhaustive : " + " ".join(members))
    for subject, members in schema.exclusion_rules:
        lines.append(f"exclude {subject} : " + " ".join(members))
    for subject, members in schema.dependency_rules:
        lines.append(f"require {subject} : " + " ".join(members))
    return "\n".join(lines) + "\n"


def validate_schema(schema: AttributeSchema) -> list[str]:
    """Check every schema invariant; return one message per violation.

    An empty list means the schema is valid.  Violations are data, not
    exceptions, so callers can report all of them at once.
    """
    violations = []
    seen = set()
    for attr in schema.attributes:
        if not attr:
            violations.append("empty attribute name")
        if attr in seen:
            violations.append(f"duplicate attribute {attr!r}")
        seen.add(attr)

    def check_rules(rules, kind):
        for subject, members in rules:
            if subject not in seen:
                violations.append(f"{kind} rule subject {subject!r} is not a declared attribute")
            if subject in members:
                violations.append(f"{kind} rule for {subject!r} references itself")
            for m in members:
                if m not in seen:
                    violations.append(f"{kind} rule for {subject!r} references undeclared {m!r}")

    check_rules(schema.exclusion_rules, "exclusion")
    check_rules(schema.dependency_rules, "dependency")

    for name, members in schema.exhaustive_groups:
        if len(members) < 2:
            violations.append(f"exhaustive group {name!r} has fewer than 2 members")
        for m in members:
            if m not in seen:
                violations.append(f"exhaustive group {name!r} references undeclared {m!r}")
    return violations


# Built-in default: 22 facial-hair attributes in five groups, each group both
# mutually exclusive and collectively exhaustive.  clean_shaven belongs to
# both the beard-area and beard-length groups.  The dependency list encodes
# that a stated beard length, a mustache connected to a beard, or sideburns
# connected to a beard presuppose a compatible beard area; the *_nv
# (info-not-visible) values presuppose nothing.
_FH37K_DSL = """\
schema fh37k
attrs clean_shaven chin_area side_to_side beard_area_nv
attrs five_oclock_shadow short medium long beard_length_nv
attrs mustache_none mustache_isolated mustache_connected mustache_nv
attrs sideburns_none sideburns_present sideburns_connected sideburns_nv
attrs bald_false bald_top bald_sides bald_top_and_sides bald_nv
group beard_area exclusive exhaustive : clean_shaven chin_area side_to_side beard_area_nv
group beard_length exclusive exhaustive : clean_shaven five_oclock_shadow short medium long beard_length_nv
group mustache exclusive exhaustive : mustache_none mustache_isolated mustache_connected mustache_nv
group sideburns exclusive exhaustive : sideburns_none sideburns_present sideburns_connected sideburns_nv
group bald exclusive exhaustive : bald_false bald_top bald_sides bald_top_and_sides bald_nv
require five_oclock_shadow : chin_area side_to_side
require short : chin_area side_to_side
require medium : chin_area side_to_side
require long : chin_area side_to_side
require mustache_connected : chin_area side_to_side
require sideburns_connected : side_to_side
"""

_FH37K_CACHE: list = []


def fh37k_default() -> AttributeSchema:
    """The built-in 22-attribute facial-hair schema."""
    if not _FH37K_CACHE:
        _FH37K_CACHE.append(parse_schema(_FH37K_DSL))
    return _FH37K_CACHE[0]
