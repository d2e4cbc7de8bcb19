from __future__ import annotations

import random
import re

import pytest

from chops.store import GuardFailed, UserType
from chops.tools import (
    ArityMismatch,
    DuplicateName,
    NotExposed,
    Permission,
    PermissionDenied,
    ToolCall,
    ToolCategory,
    ToolDescriptor,
    ToolRegistry,
    TypeMismatch,
    UnknownTool,
    catalog_export_records,
    render_for_prompt,
)

PAPER_TOOLS = (
    "AddNewSchoolByName",
    "MakeAllTypesToBeArbiter",
    "GetTeacherInfoBySchoolName",
    "ChangeAllTypesUploadLimit",
)


def _descriptor(name: str, exposed: bool = True) -> ToolDescriptor:
    return ToolDescriptor(
        name=name,
        category=ToolCategory.DATA_QUERY,
        params=(("x", "int"),),
        description="test tool",
        exposed_to_llm=exposed,
        permission=Permission.ANY_USER,
    )


def test_register_duplicate_name():
    registry = ToolRegistry()
    registry.register(_descriptor("A"))
    with pytest.raises(DuplicateName):
        registry.register(_descriptor("A"))


def test_register_the_four_paper_tools(registry):
    catalog = {d.name for d in registry.catalog()}
    assert set(PAPER_TOOLS) <= catalog


def test_registry_of_only_the_four_named_tools(registry):
    fresh = ToolRegistry()
    for name in PAPER_TOOLS:
        fresh.register(registry.descriptor(name))
    assert len(fresh.catalog()) == 4


def test_shipped_counts(registry):
    catalog = registry.catalog()
    assert len(catalog) == 27
    exposed = registry.exposed_catalog()
    assert len(exposed) == 10
    managing = [d for d in catalog if d.category is ToolCategory.DATA_MANAGING]
    queries = [d for d in catalog if d.category is ToolCategory.DATA_QUERY]
    assert len(managing) == 9
    assert len(queries) == 18


def test_exposed_catalog_empty_and_subset():
    registry = ToolRegistry()
    assert registry.exposed_catalog() == []
    registry.register(_descriptor("A", exposed=False))
    registry.register(_descriptor("B", exposed=True))
    exposed = registry.exposed_catalog()
    assert [d.name for d in exposed] == ["B"]
    assert set(d.name for d in exposed) < set(d.name for d in registry.catalog())


def test_render_for_prompt_empty_and_single():
    assert render_for_prompt([]) == ""
    line = render_for_prompt([_descriptor("OnlyOne")])
    assert line.count("\n") == 0
    assert "OnlyOne" in line


def test_render_for_prompt_shipped_under_budget(registry):
    rendered = render_for_prompt(registry.exposed_catalog())
    assert len(rendered.splitlines()) == 10
    assert len(rendered) < 2500


def test_validate_unknown_tool(registry):
    with pytest.raises(UnknownTool):
        registry.validate(ToolCall("DropAllTables", (), 1))


def test_validate_arity(registry):
    call = ToolCall("GetTeacherInfoBySchoolName", (("userId", 2),), 2)
    with pytest.raises(ArityMismatch):
        registry.validate(call)


def test_validate_type_mismatch(registry):
    call = ToolCall("ChangeAllTypesUploadLimit", (("userId", 3), ("Limit", "ten")), 3)
    with pytest.raises(TypeMismatch):
        registry.validate(call)


def test_validate_unexposed_only_blocks_model_origin(registry):
    call = ToolCall("GetMemberById", (("MemberId", 1),), 2)
    with pytest.raises(NotExposed):
        registry.validate(call, origin="model")
    assert registry.validate(call, origin="harness").descriptor.name == "GetMemberById"


def test_authorize_admin_only(registry, store):
    bob = store.profile_by_nickname("bob_vice")
    admin = store.profile_by_nickname("root_admin")
    call = registry.validate(
        ToolCall("GetTeacherInfoBySchoolName", (("userId", 3), ("SchoolName", "Riverdale High")), 3)
    )
    with pytest.raises(PermissionDenied):
        registry.authorize(call, bob)
    registry.authorize(
        registry.validate(
            ToolCall(
                "AddNewSchoolByName",
                (("userId", 2), ("Name", "New School"), ("AreaName", "North")),
                2,
            )
        ),
        admin,
    )


def test_authorize_self_only(registry, store):
    alice = store.profile_by_nickname("alice_tl")
    own = registry.validate(ToolCall("ChangeAllTypesUploadLimit", (("userId", 1), ("Limit", 10)), 1))
    registry.authorize(own, alice)
    other = registry.validate(ToolCall("ChangeAllTypesUploadLimit", (("userId", 5), ("Limit", 10)), 1))
    with pytest.raises(PermissionDenied):
        registry.authorize(other, alice)


def test_execute_make_arbiter(registry, store):
    admin = store.profile_by_nickname("root_admin")
    result = registry.invoke(
        ToolCall("MakeAllTypesToBeArbiter", (("ChangedUserId", 1),), admin.user_id), admin
    )
    assert result.status == "Ok"
    assert result.mutated is True
    assert store.profile_by_nickname("alice_tl").user_type is UserType.ARBITER


def test_execute_negative_limit_guard(registry, store):
    alice = store.profile_by_nickname("alice_tl")
    before = store.digest()
    result = registry.invoke(
        ToolCall("ChangeAllTypesUploadLimit", (("userId", 1), ("Limit", -5)), 1), alice
    )
    assert result.status == "GuardFailed"
    assert result.mutated is False
    assert store.digest() == before


def test_query_never_changes_digest(registry, store):
    admin = store.profile_by_nickname("root_admin")
    before = store.digest()
    for name, args in [
        ("GetMyProfile", (("userId", 2),)),
        ("GetMyUploadLimit", (("userId", 2),)),
        ("ListMyStudents", (("userId", 2),)),
        ("GetTeacherInfoBySchoolName", (("userId", 2), ("SchoolName", "Riverdale High"))),
    ]:
        result = registry.invoke(ToolCall(name, args, 2), admin)
        assert result.status == "Ok"
        assert result.mutated is False
    assert store.digest() == before


def test_add_school_creates_area_when_new(registry, store):
    admin = store.profile_by_nickname("root_admin")
    result = registry.invoke(
        ToolCall(
            "AddNewSchoolByName",
            (("userId", 2), ("Name", "Plateau School"), ("AreaName", "Far South")),
            2,
        ),
        admin,
    )
    assert result.status == "Ok"
    schools = store.rows("cmf_tp_school")
    assert any(r["school_name"] == "Plateau School" for r in schools)
    assert any(r["area"] == "Far South" for r in store.rows("cmf_tp_area"))


def test_every_invoke_appends_one_audit_record(registry, store):
    alice = store.profile_by_nickname("alice_tl")
    calls = [
        ToolCall("GetMyProfile", (("userId", 1),), 1),  # Ok
        ToolCall("GetMyProfile", (("userId", 5),), 1),  # PermissionDenied
        ToolCall("NoSuchTool", (), 1),  # ValidationError
        ToolCall("ChangeAllTypesUploadLimit", (("userId", 1), ("Limit", -1)), 1),  # GuardFailed
    ]
    for call in calls:
        registry.invoke(call, alice)
    log = registry.audit_log
    assert len(log) == len(calls)
    assert [r.status for r in log] == ["Ok", "PermissionDenied", "ValidationError", "GuardFailed"]


_RENDERED_LINE = re.compile(r"^(\w+)\(([^)]*)\) -- ")


def test_render_validate_round_trip(registry):
    """Every line render_for_prompt emits parses back into a ValidatedCall."""
    rendered = render_for_prompt(registry.exposed_catalog())
    for line in rendered.splitlines():
        match = _RENDERED_LINE.match(line)
        assert match, line
        name, params_raw = match.group(1), match.group(2)
        args = []
        if params_raw:
            for piece in params_raw.split(", "):
                pname, ptype = piece.split(": ")
                args.append((pname, 1 if ptype == "int" else "x"))
        validated = registry.validate(ToolCall(name, tuple(args), 1), origin="model")
        assert validated.descriptor.name == name


def test_catalog_export_shape(registry):
    records = catalog_export_records(registry)
    assert len(records) == 27
    sample = records[0]
    assert set(sample) == {"name", "category", "params", "description", "exposed", "permission"}
    assert sum(1 for r in records if r["exposed"]) == 10


def _random_call(rng: random.Random, names: list[str]) -> ToolCall:
    name = rng.choice(names + ["Bogus", "DropEverything"])
    n_args = rng.randint(0, 3)
    args = tuple(
        (
            rng.choice(["userId", "Limit", "Name", "x", "ChangedUserId", "MemberId"]),
            rng.choice([rng.randint(-10, 40), "text", "ten", ""]),
        )
        for _ in range(n_args)
    )
    return ToolCall(name, args, rng.randint(0, 14))


def test_fuzz_1000_calls_non_ok_never_mutates(registry, store):
    rng = random.Random(1234)
    names = [d.name for d in registry.catalog()]
    profiles = [store.profile_by_nickname(n) for n in store.nicknames()]
    for _ in range(1000):
        caller = rng.choice(profiles)
        call = _random_call(rng, names)
        before = store.digest()
        result = registry.invoke(call, caller, origin="model")
        if result.status != "Ok":
            assert store.digest() == before
        assert result.mutated == (
            result.status == "Ok"
            and registry.descriptor(call.name).category is ToolCategory.DATA_MANAGING
        )
    assert len(registry.audit_log) == 1000
