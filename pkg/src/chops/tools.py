"""Wrapped-API registry over the profile store.

Every operation the model may trigger goes through a typed descriptor:
validation, caller authorization, and in-API guards run before anything
touches a table, and every invocation lands in an append-only audit log.
Raw relational commands are never accepted from the model.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from .store import (
    GuardFailed,
    MEMBER_TYPE_ARBITER,
    RowInsert,
    RowUpdate,
    Store,
    UnknownRow,
    UserProfile,
    basic_info_text,
)

Value = int | str


class ToolCategory(str, Enum):
    DATA_QUERY = "DataQuery"
    DATA_MANAGING = "DataManaging"


class Permission(str, Enum):
    ANY_USER = "AnyUser"
    ADMIN_ONLY = "AdminOnly"
    SELF_ONLY = "SelfOnly"


class DuplicateName(Exception):
    pass


class UnknownTool(Exception):
    pass


class NotExposed(Exception):
    pass


class ArityMismatch(Exception):
    pass


class TypeMismatch(Exception):
    pass


class PermissionDenied(Exception):
    pass


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    category: ToolCategory
    params: tuple[tuple[str, str], ...]  # (name, "int" | "text"), call order
    description: str
    exposed_to_llm: bool
    permission: Permission
    # Name of the argument that must equal the caller id for SelfOnly tools.
    target_user_param: str | None = None

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError(f"{self.name}: description must be non-empty")
        for pname, ptype in self.params:
            if ptype not in ("int", "text"):
                raise ValueError(f"{self.name}.{pname}: bad type {ptype!r}")
        if self.permission is Permission.SELF_ONLY and self.target_user_param is None:
            raise ValueError(f"{self.name}: SelfOnly tools must declare target_user_param")


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: tuple[tuple[str, Value], ...]  # ordered (param, raw value) pairs
    caller_user_id: int


@dataclass(frozen=True)
class ValidatedCall:
    descriptor: ToolDescriptor
    args: dict[str, Value]  # typed, keyed by declared param name
    caller_user_id: int
    origin: str  # "model" | "harness"


@dataclass(frozen=True)
class ToolResult:
    status: str  # Ok | GuardFailed | PermissionDenied | ValidationError
    payload: str
    mutated: bool


@dataclass(frozen=True)
class AuditRecord:
    timestamp: float
    caller_user_id: int
    call: ToolCall
    status: str


# handler(store, caller, args) -> payload text; managing handlers commit via
# store.guarded_update and let GuardFailed propagate.
Handler = Callable[[Store, UserProfile, dict[str, Value]], str]


class ToolRegistry:
    """Immutable-after-startup catalog of wrapped operations."""

    def __init__(self, store: Store | None = None):
        self._store = store
        self._descriptors: dict[str, ToolDescriptor] = {}
        self._handlers: dict[str, Handler] = {}
        self._order: list[str] = []
        self._audit: list[AuditRecord] = []
        self._audit_lock = threading.Lock()

    @property
    def store(self) -> Store:
        assert self._store is not None, "registry built without a store"
        return self._store

    def register(self, descriptor: ToolDescriptor, handler: Handler | None = None) -> None:
        if descriptor.name in self._descriptors:
            raise DuplicateName(descriptor.name)
        self._descriptors[descriptor.name] = descriptor
        if handler is not None:
            self._handlers[descriptor.name] = handler
        self._order.append(descriptor.name)

    def catalog(self) -> list[ToolDescriptor]:
        return [self._descriptors[name] for name in self._order]

    def exposed_catalog(self) -> list[ToolDescriptor]:
        return [d for d in self.catalog() if d.exposed_to_llm]

    def descriptor(self, name: str) -> ToolDescriptor:
        try:
            return self._descriptors[name]
        except KeyError:
            raise UnknownTool(name) from None

    # -- validation / authorization -------------------------------------------

    def validate(self, call: ToolCall, origin: str = "model") -> ValidatedCall:
        if call.name not in self._descriptors:
            raise UnknownTool(call.name)
        descriptor = self._descriptors[call.name]
        if origin == "model" and not descriptor.exposed_to_llm:
            raise NotExposed(call.name)
        declared = [p for p, _ in descriptor.params]
        if len(call.args) != len(declared):
            raise ArityMismatch(
                f"{call.name}: got {len(call.args)} args, expected {len(declared)}"
            )
        given = {name for name, _ in call.args}
        if given != set(declared):
            raise ArityMismatch(
                f"{call.name}: parameters {sorted(given)} != declared {sorted(declared)}"
            )
        types = dict(descriptor.params)
        typed: dict[str, Value] = {}
        for name, raw in call.args:
            if types[name] == "int":
                if isinstance(raw, int):
                    typed[name] = raw
                elif isinstance(raw, str) and re.fullmatch(r"-?\d+", raw.strip()):
                    typed[name] = int(raw.strip())
                else:
                    raise TypeMismatch(f"{call.name}.{name}: {raw!r} is not an integer")
            else:
                typed[name] = str(raw)
        return ValidatedCall(descriptor, typed, call.caller_user_id, origin)

    def authorize(self, validated: ValidatedCall, caller: UserProfile) -> None:
        descriptor = validated.descriptor
        if descriptor.permission is Permission.ADMIN_ONLY and not caller.is_admin:
            raise PermissionDenied(f"{descriptor.name} requires an admin caller")
        if descriptor.permission is Permission.SELF_ONLY:
            target = validated.args[descriptor.target_user_param or ""]
            if target != caller.user_id:
                raise PermissionDenied(
                    f"{descriptor.name} may only target the caller's own account"
                )

    # -- execution -------------------------------------------------------------

    def execute(self, validated: ValidatedCall, caller: UserProfile) -> ToolResult:
        """Run a validated, authorized call; failures come back in the status."""
        descriptor = validated.descriptor
        handler = self._handlers.get(descriptor.name)
        if handler is None:
            result = ToolResult("GuardFailed", f"{descriptor.name} has no implementation", False)
        else:
            try:
                payload = handler(self.store, caller, validated.args)
                mutated = descriptor.category is ToolCategory.DATA_MANAGING
                result = ToolResult("Ok", payload, mutated)
            except (GuardFailed, UnknownRow) as exc:
                result = ToolResult("GuardFailed", str(exc), False)
        self._append_audit(
            ToolCall(descriptor.name, tuple(validated.args.items()), validated.caller_user_id),
            result.status,
        )
        return result

    def invoke(self, call: ToolCall, caller: UserProfile, origin: str = "model") -> ToolResult:
        """validate -> authorize -> execute, mapping rejections into the result."""
        try:
            validated = self.validate(call, origin=origin)
        except (UnknownTool, NotExposed, ArityMismatch, TypeMismatch) as exc:
            self._append_audit(call, "ValidationError")
            return ToolResult("ValidationError", f"{type(exc).__name__}: {exc}", False)
        try:
            self.authorize(validated, caller)
        except PermissionDenied as exc:
            self._append_audit(call, "PermissionDenied")
            return ToolResult("PermissionDenied", str(exc), False)
        return self.execute(validated, caller)

    def _append_audit(self, call: ToolCall, status: str) -> None:
        record = AuditRecord(time.time(), call.caller_user_id, call, status)
        with self._audit_lock:
            self._audit.append(record)

    @property
    def audit_log(self) -> list[AuditRecord]:
        with self._audit_lock:
            return list(self._audit)


def render_for_prompt(catalog: list[ToolDescriptor]) -> str:
    """One line per tool: name, typed params, description."""
    lines = []
    for d in catalog:
        params = ", ".join(f"{name}: {ptype}" for name, ptype in d.params)
        lines.append(f"{d.name}({params}) -- {d.description}")
    return "\n".join(lines)


def render_call(name: str, args: dict[str, Value] | tuple[tuple[str, Value], ...]) -> str:
    pairs = args.items() if isinstance(args, dict) else args
    inner = ", ".join(f"{k}={v}" for k, v in pairs)
    return f"{name}({inner})"


def catalog_export_records(registry: ToolRegistry) -> list[dict]:
    return [
        {
            "name": d.name,
            "category": d.category.value,
            "params": [{"name": n, "type": t} for n, t in d.params],
            "description": d.description,
            "exposed": d.exposed_to_llm,
            "permission": d.permission.value,
        }
        for d in registry.catalog()
    ]


def export_catalog(registry: ToolRegistry, path: str | Path) -> None:
    """Machine-readable catalog file consumed by docs and the console."""
    Path(path).write_text(
        json.dumps(catalog_export_records(registry), indent=2) + "\n", encoding="utf-8"
    )


# --- shipped tool set ---------------------------------------------------------


def _require_member(store: Store, member_id: int) -> dict:
    rows = store.tables()["cmf_tp_member"]
    if member_id not in rows:
        raise GuardFailed(f"no member with id {member_id}")
    return rows[member_id]


def _add_new_school(store: Store, caller: UserProfile, args: dict) -> str:
    name, area_name = str(args["Name"]).strip(), str(args["AreaName"]).strip()
    with store.write_section():
        if not name:
            raise GuardFailed("school name must be non-empty")
        if not area_name:
            raise GuardFailed("area name must be non-empty")
        schools = store.tables()["cmf_tp_school"]
        if any(r["school_name"] == name for r in schools.values()):
            raise GuardFailed(f"school {name!r} already exists")
        areas = store.tables()["cmf_tp_area"]
        area_id = next((i for i, r in areas.items() if r["area"] == area_name), None)
        if area_id is None:
            area_id = store.next_id("cmf_tp_area")
            store.guarded_update(RowInsert("cmf_tp_area", {"id": area_id, "area": area_name}))
        school_id = store.next_id("cmf_tp_school")
        store.guarded_update(
            RowInsert("cmf_tp_school", {"id": school_id, "area": area_id, "school_name": name})
        )
    return f"Added school {name} (id {school_id}) in area {area_name}."


def _make_arbiter(store: Store, caller: UserProfile, args: dict) -> str:
    target = int(args["ChangedUserId"])
    _require_member(store, target)
    store.guarded_update(RowUpdate("cmf_tp_member", target, {"type": MEMBER_TYPE_ARBITER}))
    member = store.row("cmf_tp_member", target)
    return f"User {member['nickname']} (id {target}) is now an arbiter."


def _teacher_info_by_school(store: Store, caller: UserProfile, args: dict) -> str:
    school_name = str(args["SchoolName"])
    schools = store.tables()["cmf_tp_school"]
    school_id = next((i for i, r in schools.items() if r["school_name"] == school_name), None)
    if school_id is None:
        raise GuardFailed(f"no school named {school_name!r}")
    members = [r for r in store.rows("cmf_tp_member") if r["school_id"] == school_id]
    lines = [
        f"{r['nickname']} (id {r['id']}, user name {r['user_name']}, type {r['type']})"
        for r in members
    ]
    return f"Members of {school_name}: " + ("; ".join(lines) if lines else "none")


def _change_upload_limit(store: Store, caller: UserProfile, args: dict) -> str:
    target, limit = int(args["userId"]), int(args["Limit"])
    if limit < 0:
        raise GuardFailed("upload limit must be >= 0")
    _require_member(store, target)
    store.guarded_update(RowUpdate("cmf_tp_member", target, {"limit": limit}))
    return f"Upload limit for user {target} is now {limit}."


def _get_my_profile(store: Store, caller: UserProfile, args: dict) -> str:
    return basic_info_text(store.profile_by_user_id(int(args["userId"])))


def _get_my_marking_subject(store: Store, caller: UserProfile, args: dict) -> str:
    member = _require_member(store, int(args["userId"]))
    subject_id = int(member["subject"])
    subjects = store.tables()["cmf_tp_subject"]
    if subject_id in subjects:
        label = f"question {subjects[subject_id]['subject']} of exam {subjects[subject_id]['p_id']}"
    else:
        label = "no assigned question"
    return f"Your marking subject id is {subject_id} ({label})."


def _change_marking_subject(store: Store, caller: UserProfile, args: dict) -> str:
    target, subject_id = int(args["userId"]), int(args["SubjectId"])
    _require_member(store, target)
    if subject_id not in store.tables()["cmf_tp_subject"]:
        raise GuardFailed(f"no subject with id {subject_id}")
    store.guarded_update(RowUpdate("cmf_tp_member", target, {"subject": subject_id}))
    return f"Marking subject for user {target} is now subject {subject_id}."


def _get_my_upload_limit(store: Store, caller: UserProfile, args: dict) -> str:
    member = _require_member(store, int(args["userId"]))
    return f"Your upload limit is {member['limit']}."


def _list_my_students(store: Store, caller: UserProfile, args: dict) -> str:
    target = int(args["userId"])
    _require_member(store, target)
    students = [r for r in store.rows("cmf_tp_student") if r["user_id"] == target]
    if not students:
        return "You have no registered students."
    listed = "; ".join(f"{r['name']} (grade {r['grade']})" for r in students)
    return f"Your students: {listed}"


def _add_student(store: Store, caller: UserProfile, args: dict) -> str:
    owner, name, grade = int(args["userId"]), str(args["Name"]).strip(), int(args["Grade"])
    if not name:
        raise GuardFailed("student name must be non-empty")
    if grade < 1:
        raise GuardFailed("grade must be >= 1")
    with store.write_section():
        member = _require_member(store, owner)
        student_id = store.next_id("cmf_tp_student")
        store.guarded_update(
            RowInsert(
                "cmf_tp_student",
                {
                    "id": student_id,
                    "user_id": owner,
                    "name": name,
                    "school": member["school_id"],
                    "grade": grade,
                    "prize": "",
                },
            )
        )
    return f"Added student {name} (id {student_id}, grade {grade})."


def _get_member_by_id(store: Store, caller: UserProfile, args: dict) -> str:
    member = _require_member(store, int(args["MemberId"]))
    return json.dumps(member, ensure_ascii=False, sort_keys=True)


def _get_member_by_nickname(store: Store, caller: UserProfile, args: dict) -> str:
    nickname = str(args["Nickname"])
    row = next(
        (r for r in store.rows("cmf_tp_member") if r["nickname"] == nickname), None
    )
    if row is None:
        raise GuardFailed(f"no member nicknamed {nickname!r}")
    return json.dumps(row, ensure_ascii=False, sort_keys=True)


def _list_table(table: str, render: Callable[[dict], str]) -> Handler:
    def handler(store: Store, caller: UserProfile, args: dict) -> str:
        return "; ".join(render(r) for r in store.rows(table)) or "none"

    return handler


def _get_exam_by_id(store: Store, caller: UserProfile, args: dict) -> str:
    exams = store.tables()["cmf_tp_exam"]
    exam_id = int(args["ExamId"])
    if exam_id not in exams:
        raise GuardFailed(f"no exam with id {exam_id}")
    return json.dumps(exams[exam_id], ensure_ascii=False, sort_keys=True)


def _list_subjects_for_exam(store: Store, caller: UserProfile, args: dict) -> str:
    exam_id = int(args["ExamId"])
    rows = [r for r in store.rows("cmf_tp_subject") if r["p_id"] == exam_id]
    return "; ".join(f"subject {r['id']} = question {r['subject']}" for r in rows) or "none"


def _get_school_by_name(store: Store, caller: UserProfile, args: dict) -> str:
    name = str(args["Name"])
    row = next((r for r in store.rows("cmf_tp_school") if r["school_name"] == name), None)
    if row is None:
        raise GuardFailed(f"no school named {name!r}")
    return json.dumps(row, ensure_ascii=False, sort_keys=True)


def _list_members_by_school(store: Store, caller: UserProfile, args: dict) -> str:
    school_id = int(args["SchoolId"])
    rows = [r for r in store.rows("cmf_tp_member") if r["school_id"] == school_id]
    return "; ".join(f"{r['nickname']} (id {r['id']})" for r in rows) or "none"


def _get_student_by_id(store: Store, caller: UserProfile, args: dict) -> str:
    students = store.tables()["cmf_tp_student"]
    student_id = int(args["StudentId"])
    if student_id not in students:
        raise GuardFailed(f"no student with id {student_id}")
    return json.dumps(students[student_id], ensure_ascii=False, sort_keys=True)


def _list_students_of_member(store: Store, caller: UserProfile, args: dict) -> str:
    member_id = int(args["MemberId"])
    rows = [r for r in store.rows("cmf_tp_student") if r["user_id"] == member_id]
    return "; ".join(f"{r['name']} (id {r['id']})" for r in rows) or "none"


def _count_answer_sheets(store: Store, caller: UserProfile, args: dict) -> str:
    member_id = int(args["MemberId"])
    count = sum(1 for r in store.rows("cmf_tp_correct") if r["user_id"] == member_id)
    return str(count)


def _get_test_paper_by_id(store: Store, caller: UserProfile, args: dict) -> str:
    papers = store.tables()["cmf_tp_test_paper"]
    paper_id = int(args["TestPaperId"])
    if paper_id not in papers:
        raise GuardFailed(f"no test paper with id {paper_id}")
    return json.dumps(papers[paper_id], ensure_ascii=False, sort_keys=True)


def _set_member_status(store: Store, caller: UserProfile, args: dict) -> str:
    target, status = int(args["MemberId"]), int(args["Status"])
    _require_member(store, target)
    store.guarded_update(RowUpdate("cmf_tp_member", target, {"status": status}))
    return f"Status for member {target} is now {status}."


def _rename_school(store: Store, caller: UserProfile, args: dict) -> str:
    school_id, new_name = int(args["SchoolId"]), str(args["NewName"]).strip()
    if not new_name:
        raise GuardFailed("school name must be non-empty")
    if school_id not in store.tables()["cmf_tp_school"]:
        raise GuardFailed(f"no school with id {school_id}")
    store.guarded_update(RowUpdate("cmf_tp_school", school_id, {"school_name": new_name}))
    return f"School {school_id} renamed to {new_name}."


def _set_exam_visibility(store: Store, caller: UserProfile, args: dict) -> str:
    exam_id, show = int(args["ExamId"]), int(args["Show"])
    if exam_id not in store.tables()["cmf_tp_exam"]:
        raise GuardFailed(f"no exam with id {exam_id}")
    store.guarded_update(RowUpdate("cmf_tp_exam", exam_id, {"show": show}))
    return f"Exam {exam_id} visibility is now {show}."


def _set_student_prize(store: Store, caller: UserProfile, args: dict) -> str:
    student_id, prize = int(args["StudentId"]), str(args["Prize"])
    if student_id not in store.tables()["cmf_tp_student"]:
        raise GuardFailed(f"no student with id {student_id}")
    store.guarded_update(RowUpdate("cmf_tp_student", student_id, {"prize": prize}))
    return f"Prize for student {student_id} is now {prize!r}."


def build_shipped_registry(store: Store) -> ToolRegistry:
    """The full shipped set: 27 tools, 10 exposed to the model."""
    registry = ToolRegistry(store)
    Q, M = ToolCategory.DATA_QUERY, ToolCategory.DATA_MANAGING
    ANY, ADMIN, SELF = Permission.ANY_USER, Permission.ADMIN_ONLY, Permission.SELF_ONLY

    def add(name, category, params, description, exposed, permission, handler, target=None):
        registry.register(
            ToolDescriptor(
                name=name,
                category=category,
                params=tuple(params),
                description=description,
                exposed_to_llm=exposed,
                permission=permission,
                target_user_param=target,
            ),
            handler,
        )

    # exposed set
    add(
        "AddNewSchoolByName", M,
        [("userId", "int"), ("Name", "text"), ("AreaName", "text")],
        "add a new school given its name and area; admin only",
        True, ADMIN, _add_new_school,
    )
    add(
        "MakeAllTypesToBeArbiter", M, [("ChangedUserId", "int")],
        "change a specific user into an arbiter; admin only",
        True, ADMIN, _make_arbiter,
    )
    add(
        "GetTeacherInfoBySchoolName", Q,
        [("userId", "int"), ("SchoolName", "text")],
        "get user info by school name; only an admin user can call this successfully",
        True, ADMIN, _teacher_info_by_school,
    )
    add(
        "ChangeAllTypesUploadLimit", M,
        [("userId", "int"), ("Limit", "int")],
        "change a user's upload limit (answer sheet count)",
        True, SELF, _change_upload_limit, target="userId",
    )
    add(
        "GetMyProfile", Q, [("userId", "int")],
        "return the caller's joined profile",
        True, SELF, _get_my_profile, target="userId",
    )
    add(
        "GetMyMarkingSubject", Q, [("userId", "int")],
        "return the caller's assigned marking question",
        True, SELF, _get_my_marking_subject, target="userId",
    )
    add(
        "ChangeMarkingSubject", M,
        [("userId", "int"), ("SubjectId", "int")],
        "assign the caller a different marking question",
        True, SELF, _change_marking_subject, target="userId",
    )
    add(
        "GetMyUploadLimit", Q, [("userId", "int")],
        "return the caller's upload limit",
        True, SELF, _get_my_upload_limit, target="userId",
    )
    add(
        "ListMyStudents", Q, [("userId", "int")],
        "list students registered under the caller",
        True, SELF, _list_my_students, target="userId",
    )
    add(
        "AddStudent", M,
        [("userId", "int"), ("Name", "text"), ("Grade", "int")],
        "register a new student under the caller at the caller's school",
        True, SELF, _add_student, target="userId",
    )

    # internal query helpers (harness/service use only)
    add("GetMemberById", Q, [("MemberId", "int")], "raw member row", False, ANY, _get_member_by_id)
    add(
        "GetMemberByNickname", Q, [("Nickname", "text")],
        "raw member row by nickname", False, ANY, _get_member_by_nickname,
    )
    add(
        "ListSchools", Q, [], "all school rows", False, ANY,
        _list_table("cmf_tp_school", lambda r: f"{r['school_name']} (id {r['id']})"),
    )
    add(
        "ListAreas", Q, [], "all area rows", False, ANY,
        _list_table("cmf_tp_area", lambda r: f"{r['area']} (id {r['id']})"),
    )
    add(
        "ListExams", Q, [], "all exam rows", False, ANY,
        _list_table("cmf_tp_exam", lambda r: f"{r['title']} (id {r['id']})"),
    )
    add("GetExamById", Q, [("ExamId", "int")], "raw exam row", False, ANY, _get_exam_by_id)
    add(
        "ListSubjectsForExam", Q, [("ExamId", "int")],
        "subjects attached to one exam", False, ANY, _list_subjects_for_exam,
    )
    add(
        "GetSchoolByName", Q, [("Name", "text")],
        "raw school row by name", False, ANY, _get_school_by_name,
    )
    add(
        "ListMembersBySchoolId", Q, [("SchoolId", "int")],
        "members registered at one school", False, ANY, _list_members_by_school,
    )
    add(
        "GetStudentById", Q, [("StudentId", "int")],
        "raw student row", False, ANY, _get_student_by_id,
    )
    add(
        "ListStudentsOfMember", Q, [("MemberId", "int")],
        "students under one member", False, ANY, _list_students_of_member,
    )
    add(
        "CountAnswerSheets", Q, [("MemberId", "int")],
        "number of answer sheet records for one member", False, ANY, _count_answer_sheets,
    )
    add(
        "GetTestPaperById", Q, [("TestPaperId", "int")],
        "raw test paper row", False, ANY, _get_test_paper_by_id,
    )

    # internal managing helpers
    add(
        "SetMemberStatus", M, [("MemberId", "int"), ("Status", "int")],
        "approve or unapprove a member for the platform", False, ADMIN, _set_member_status,
    )
    add(
        "RenameSchool", M, [("SchoolId", "int"), ("NewName", "text")],
        "rename an existing school", False, ADMIN, _rename_school,
    )
    add(
        "SetExamVisibility", M, [("ExamId", "int"), ("Show", "int")],
        "toggle whether an exam is shown", False, ADMIN, _set_exam_visibility,
    )
    add(
        "SetStudentPrize", M, [("StudentId", "int"), ("Prize", "text")],
        "record a prize string for a student", False, ADMIN, _set_student_prize,
    )
    return registry
