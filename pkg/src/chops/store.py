"""In-memory customer profile store seeded from TSV bundles.

Holds the nine relational tables behind the service, answers profile
lookups by nickname, and exposes guarded mutation primitives plus a
canonical digest used by the safety tests ("no mutation on rejected
call").
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping

Value = int | str
Row = dict[str, Value]
Tables = dict[str, dict[int, Row]]

# Table name -> ordered field list. Headers of seed files must match exactly.
TABLE_FIELDS: dict[str, tuple[str, ...]] = {
    "cmf_tp_member": (
        "id", "p_id", "user_name", "school_id", "subject", "status",
        "type", "limit", "create_time", "nickname",
    ),
    "cmf_tp_admin": ("id", "user_id"),
    "cmf_tp_school": ("id", "area", "school_name"),
    "cmf_tp_area": ("id", "area"),
    "cmf_tp_correct": ("id", "user_id", "p_id", "grade", "status", "create_time"),
    "cmf_tp_exam": ("id", "status", "title", "type", "show", "create_time"),
    "cmf_tp_subject": ("id", "p_id", "subject", "image", "grade", "status", "create_time"),
    "cmf_tp_test_paper": (
        "id", "p_id", "user_id", "student_id", "score", "eight", "two", "create_time",
    ),
    "cmf_tp_student": ("id", "user_id", "name", "school", "grade", "prize"),
}

INT_FIELDS: dict[str, frozenset[str]] = {
    "cmf_tp_member": frozenset({"id", "p_id", "school_id", "subject", "status", "type", "limit"}),
    "cmf_tp_admin": frozenset({"id", "user_id"}),
    "cmf_tp_school": frozenset({"id", "area"}),
    "cmf_tp_area": frozenset({"id"}),
    "cmf_tp_correct": frozenset({"id", "user_id", "p_id", "grade", "status"}),
    "cmf_tp_exam": frozenset({"id", "status", "type", "show"}),
    "cmf_tp_subject": frozenset({"id", "p_id", "subject", "grade", "status"}),
    "cmf_tp_test_paper": frozenset({"id", "p_id", "user_id", "student_id", "score", "eight", "two"}),
    "cmf_tp_student": frozenset({"id", "user_id", "school", "grade"}),
}

# (table, column) -> referenced table. `eight` and `two` stay opaque ints.
FOREIGN_KEYS: dict[tuple[str, str], str] = {
    ("cmf_tp_member", "school_id"): "cmf_tp_school",
    ("cmf_tp_member", "p_id"): "cmf_tp_exam",
    ("cmf_tp_admin", "user_id"): "cmf_tp_member",
    ("cmf_tp_school", "area"): "cmf_tp_area",
    ("cmf_tp_correct", "user_id"): "cmf_tp_member",
    ("cmf_tp_correct", "p_id"): "cmf_tp_exam",
    ("cmf_tp_subject", "p_id"): "cmf_tp_exam",
    ("cmf_tp_test_paper", "p_id"): "cmf_tp_exam",
    ("cmf_tp_test_paper", "user_id"): "cmf_tp_member",
    ("cmf_tp_test_paper", "student_id"): "cmf_tp_student",
    ("cmf_tp_student", "user_id"): "cmf_tp_member",
    ("cmf_tp_student", "school"): "cmf_tp_school",
}

MEMBER_TYPE_TEAM_LEADER = 1
MEMBER_TYPE_VICE_TEAM_LEADER = 2
MEMBER_TYPE_ARBITER = 3

APPROVED_STATUS = 1  # member.status == 1 means approved to use the platform


class UserType(str, Enum):
    TEAM_LEADER = "TeamLeader"
    VICE_TEAM_LEADER = "ViceTeamLeader"
    ARBITER = "Arbiter"


_TYPE_CODE_TO_USER_TYPE = {
    MEMBER_TYPE_TEAM_LEADER: UserType.TEAM_LEADER,
    MEMBER_TYPE_VICE_TEAM_LEADER: UserType.VICE_TEAM_LEADER,
    MEMBER_TYPE_ARBITER: UserType.ARBITER,
}

_TYPE_LABELS = {
    UserType.TEAM_LEADER: "team leader",
    UserType.VICE_TEAM_LEADER: "vice team leader",
    UserType.ARBITER: "arbiter",
}


class MalformedSeed(Exception):
    """Seed bundle is structurally invalid (field counts, types, headers)."""


class BrokenReference(Exception):
    """A foreign key points at a row that does not exist."""


class UnknownNickname(Exception):
    pass


class GuardFailed(Exception):
    pass


class UnknownRow(Exception):
    pass


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    nickname: str
    user_name: str
    school_name: str
    area: str
    user_type: UserType
    is_admin: bool
    approved_to_use_online_platform: bool
    marking_question_id: int
    upload_limit: int


@dataclass(frozen=True)
class RowUpdate:
    table: str
    row_id: int
    changes: Mapping[str, Value]


@dataclass(frozen=True)
class RowInsert:
    table: str
    row: Mapping[str, Value]


# A guard is a human-readable precondition plus its predicate over the store.
Guard = tuple[str, Callable[["Store"], bool]]


def _coerce(table: str, field: str, raw: str) -> Value:
    if field in INT_FIELDS[table]:
        try:
            return int(raw)
        except ValueError:
            raise MalformedSeed(f"{table}.{field}: expected integer, got {raw!r}") from None
    return raw


def _validate(tables: Tables) -> None:
    """Check referential and member invariants; raise on the first problem."""
    for (table, column), target in FOREIGN_KEYS.items():
        target_ids = tables[target].keys()
        for row_id, row in tables[table].items():
            if row[column] not in target_ids:
                raise BrokenReference(
                    f"{table}[{row_id}].{column}={row[column]} has no row in {target}"
                )
    nicknames: dict[str, int] = {}
    for row_id, row in tables["cmf_tp_member"].items():
        nick = str(row["nickname"])
        if nick in nicknames:
            raise MalformedSeed(f"duplicate nickname {nick!r} (rows {nicknames[nick]}, {row_id})")
        nicknames[nick] = row_id
        if row["type"] not in _TYPE_CODE_TO_USER_TYPE:
            raise MalformedSeed(f"cmf_tp_member[{row_id}].type={row['type']} is not a known code")
        if int(row["limit"]) < 0:
            raise MalformedSeed(f"cmf_tp_member[{row_id}].limit must be >= 0")


class Store:
    """Single-writer, multi-reader table set.

    Readers grab the current ``_tables`` reference and never see a
    half-applied commit: every mutation builds a fresh mapping and swaps
    it in atomically under the writer lock.
    """

    def __init__(self, tables: Tables):
        _validate(tables)
        self._tables = tables
        self._write_lock = threading.RLock()

    def write_section(self) -> threading.RLock:
        """Reentrant exclusive section for multi-step commits (id allocation)."""
        return self._write_lock

    # -- reads ---------------------------------------------------------------

    def tables(self) -> Tables:
        """Current snapshot; treat as read-only."""
        return self._tables

    def row(self, table: str, row_id: int) -> Row:
        try:
            return self._tables[table][row_id]
        except KeyError:
            raise UnknownRow(f"{table}[{row_id}]") from None

    def rows(self, table: str) -> list[Row]:
        return [self._tables[table][key] for key in sorted(self._tables[table])]

    def profile_by_nickname(self, nickname: str) -> UserProfile:
        tables = self._tables
        member = next(
            (row for row in tables["cmf_tp_member"].values() if row["nickname"] == nickname),
            None,
        )
        if member is None:
            raise UnknownNickname(nickname)
        return self._profile_of(tables, member)

    def profile_by_user_id(self, user_id: int) -> UserProfile:
        tables = self._tables
        member = tables["cmf_tp_member"].get(user_id)
        if member is None:
            raise UnknownRow(f"cmf_tp_member[{user_id}]")
        return self._profile_of(tables, member)

    @staticmethod
    def _profile_of(tables: Tables, member: Row) -> UserProfile:
        school = tables["cmf_tp_school"][member["school_id"]]
        area = tables["cmf_tp_area"][school["area"]]
        is_admin = any(
            row["user_id"] == member["id"] for row in tables["cmf_tp_admin"].values()
        )
        return UserProfile(
            user_id=int(member["id"]),
            nickname=str(member["nickname"]),
            user_name=str(member["user_name"]),
            school_name=str(school["school_name"]),
            area=str(area["area"]),
            user_type=_TYPE_CODE_TO_USER_TYPE[int(member["type"])],
            is_admin=is_admin,
            approved_to_use_online_platform=int(member["status"]) == APPROVED_STATUS,
            marking_question_id=int(member["subject"]),
            upload_limit=int(member["limit"]),
        )

    def nicknames(self) -> list[str]:
        return sorted(str(r["nickname"]) for r in self._tables["cmf_tp_member"].values())

    # -- mutation ------------------------------------------------------------

    def guarded_update(self, mutation: RowUpdate | RowInsert, guards: Iterable[Guard] = ()) -> None:
        """Apply one mutation atomically, or reject leaving the store untouched.

        Guards run first; then the mutated table set must still satisfy
        every referential invariant, otherwise the commit is rejected.
        """
        with self._write_lock:
            for description, predicate in guards:
                if not predicate(self):
                    raise GuardFailed(description)
            new_tables = dict(self._tables)
            if isinstance(mutation, RowUpdate):
                table_rows = self._tables[mutation.table]
                if mutation.row_id not in table_rows:
                    raise UnknownRow(f"{mutation.table}[{mutation.row_id}]")
                for column in mutation.changes:
                    if column not in TABLE_FIELDS[mutation.table]:
                        raise ValueError(f"unknown column {mutation.table}.{column}")
                new_row = dict(table_rows[mutation.row_id])
                new_row.update(mutation.changes)
                new_tables[mutation.table] = dict(table_rows)
                new_tables[mutation.table][mutation.row_id] = new_row
            else:
                row = dict(mutation.row)
                missing = set(TABLE_FIELDS[mutation.table]) - set(row)
                extra = set(row) - set(TABLE_FIELDS[mutation.table])
                if missing or extra:
                    raise ValueError(
                        f"insert into {mutation.table}: missing={sorted(missing)} extra={sorted(extra)}"
                    )
                row_id = int(row["id"])
                if row_id in self._tables[mutation.table]:
                    raise GuardFailed(f"{mutation.table}[{row_id}] already exists")
                new_tables[mutation.table] = dict(self._tables[mutation.table])
                new_tables[mutation.table][row_id] = row
            try:
                _validate(new_tables)
            except (BrokenReference, MalformedSeed) as exc:
                raise GuardFailed(str(exc)) from exc
            self._tables = new_tables

    def next_id(self, table: str) -> int:
        rows = self._tables[table]
        return max(rows, default=0) + 1

    # -- digest --------------------------------------------------------------

    def digest(self) -> str:
        """Canonical sha256 over all tables, independent of insertion order."""
        hasher = hashlib.sha256()
        tables = self._tables
        for table in sorted(TABLE_FIELDS):
            hasher.update(table.encode("utf-8"))
            for row_id in sorted(tables[table]):
                row = tables[table][row_id]
                record = [row[field] for field in TABLE_FIELDS[table]]
                hasher.update(json.dumps(record, ensure_ascii=False).encode("utf-8"))
        return hasher.hexdigest()


def basic_info_text(profile: UserProfile) -> str:
    """Deterministic one-paragraph rendering of every profile field."""
    return (
        f"Basic information for {profile.nickname}: "
        f"user id {profile.user_id}; "
        f"user name {profile.user_name}; "
        f"school {profile.school_name}; "
        f"area {profile.area}; "
        f"user type {_TYPE_LABELS[profile.user_type]}; "
        f"admin {'yes' if profile.is_admin else 'no'}; "
        f"approved to use online platform "
        f"{'yes' if profile.approved_to_use_online_platform else 'no'}; "
        f"marking question id {profile.marking_question_id}; "
        f"upload limit {profile.upload_limit}."
    )


def load_seed(bundle_dir: str | Path) -> Store:
    """Load a seed bundle (one TSV per table, exact headers) into a store."""
    bundle = Path(bundle_dir)
    tables: Tables = {}
    for table, fields in TABLE_FIELDS.items():
        path = bundle / f"{table}.tsv"
        if not path.exists():
            raise MalformedSeed(f"missing seed file {path.name}")
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise MalformedSeed(f"{path.name}: empty file (header row required)")
        header = tuple(lines[0].split("\t"))
        if header != fields:
            raise MalformedSeed(f"{path.name}: header {header} != {fields}")
        rows: dict[int, Row] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) != len(fields):
                raise MalformedSeed(
                    f"{path.name}:{lineno}: {len(cells)} fields, expected {len(fields)}"
                )
            row = {field: _coerce(table, field, cell) for field, cell in zip(fields, cells)}
            row_id = int(row["id"])
            if row_id in rows:
                raise MalformedSeed(f"{path.name}:{lineno}: duplicate id {row_id}")
            rows[row_id] = row
        tables[table] = rows
    return Store(tables)


def dump_seed(tables: Tables, bundle_dir: str | Path) -> None:
    """Write a table set as a seed bundle; inverse of load_seed."""
    bundle = Path(bundle_dir)
    bundle.mkdir(parents=True, exist_ok=True)
    for table, fields in TABLE_FIELDS.items():
        lines = ["\t".join(fields)]
        for row_id in sorted(tables.get(table, {})):
            row = tables[table][row_id]
            cells = []
            for field in fields:
                cell = str(row[field])
                if "\t" in cell or "\n" in cell:
                    raise MalformedSeed(f"{table}.{field} value contains tab/newline")
                cells.append(cell)
            lines.append("\t".join(cells))
        (bundle / f"{table}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def empty_tables() -> Tables:
    return {table: {} for table in TABLE_FIELDS}
