"""Deterministic desk-scale fixture: seed bundle, guide, dataset, transcripts.

Everything is a pure function of the seed. A handful of anchor rows
(alice_tl, root_admin, ...) are fixed so tests and documentation can
refer to them; the rest of the data varies with the seed. Gold
transcripts are authored alongside each question so a scripted run of
the full pipeline answers every item correctly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .store import Tables, dump_seed, empty_tables, load_seed

DEFAULT_SEED = 7

PRICING_RECORDS = [
    {"model": "gpt-3.5-turbo", "in_per_1m": 1.5, "out_per_1m": 2.0},
    {"model": "gpt-4-0125-preview", "in_per_1m": 10.0, "out_per_1m": 30.0},
]

# Executor-only strong-model reference ledger the reports compare against:
# 12.9k input / 0.19k output characters per question, over the 24 items.
BASELINE_PER_QUESTION = (12_900, 190)
N_ITEMS = 24

FIRST_NAMES = ["Ming", "Jia", "Wei", "Lan", "Hao", "Yun", "Tao", "Mei", "Kai", "Rui"]
LAST_NAMES = ["Zhang", "Wang", "Li", "Liu", "Chen", "Yang", "Zhao", "Sun", "Xu", "Guo"]
NICK_WORDS = ["physics", "optics", "quantum", "kepler", "photon", "vector", "tensor", "falcon"]
STUDENT_NAMES = [
    "An Qi", "Bai Yu", "Cheng Lei", "Ding Hui", "Fan Jing", "Gao Yan", "Han Bo",
    "Jin Hao", "Kong Rui", "Lin Mei", "Meng Chao", "Ning Xia",
    "Pan Wen", "Qin Shu", "Ren Jie", "Shen Tong", "Tan Luo", "Wu Hai", "Xie Ping",
    "Yan Fei", "Zeng Kun", "Zhou Min", "Cai Dong", "Deng Lu", "Feng Zhe",
    "Gu Xin", "He Tian", "Ji Nan", "Kang Li", "Lu Yao", "Ma Teng", "Niu Ben",
]

SCHOOLS = [
    (1, 1, "Riverdale High"),
    (2, 2, "Lakeside Academy"),
    (3, 1, "Hillcrest School"),
    (4, 3, "Maple Grove High"),
]
AREAS = [(1, "North"), (2, "East"), (3, "West")]

# (id, nickname, user_name, school_id, subject, status, type, limit)
ANCHOR_MEMBERS = [
    (1, "alice_tl", "Alice Chen", 1, 2, 1, 1, 8),
    (2, "root_admin", "Ruth Fang", 1, 1, 1, 1, 20),
    (3, "bob_vice", "Bo Lin", 2, 3, 1, 2, 5),
    (4, "carol_arb", "Carol Wei", 3, 4, 1, 3, 0),
    (5, "dave_tl", "David Zhou", 2, 5, 1, 1, 10),
    (6, "frank_tl", "Frank Mo", 4, 6, 0, 1, 4),
]

GUIDE_INTRO = (
    "Welcome to the team leader guide for the simulated olympiad platform. "
    "This document explains how team leaders, vice team leaders and arbiters "
    "use the mini program during an exam cycle. Read it once before your "
    "first exam and keep it at hand on exam day. The assistant can quote any "
    "part of this guide back to you, look up your account, and perform a "
    "small set of account operations on your behalf."
)

GUIDE_CLOSING = (
    "If anything in this guide looks out of date, tell the liaison team so "
    "the document can be corrected. The platform is run by volunteers and "
    "the guide is updated after every exam cycle."
)

GENERIC_TIPS = [
    "Keep your app version updated before every exam weekend.",
    "A stable network connection matters more than device speed when uploading.",
    "Ask your vice team leader to double check uploads before the deadline.",
    "Arbiters should review the disputed sheets before contacting the liaison team.",
    "The platform sends no email; all notices appear inside the mini program.",
    "Your nickname identifies your account in every conversation with the assistant.",
    "Scores entered by mistake can be corrected until marking closes.",
    "Do not share your account with teachers from another school.",
    "The practice exam each term is a good moment to test your workflow.",
    "Deadlines shown in the app are always in Beijing time.",
    "Screenshots of error messages help the liaison team diagnose problems.",
    "Only approved accounts can upload, mark, or change account settings.",
]

# Seed-varied elaboration templates appended to every topic paragraph;
# {topic} is replaced with the topic phrase below.
ELABORATION_TEMPLATES = [
    "Volunteers review the rules for {topic} after every exam cycle and simplify them where they can.",
    "Most questions the liaison team receives about {topic} are already answered in this section of the guide.",
    "New team leaders should practice {topic} once during the term practice exam before the real one.",
    "Nothing about {topic} requires a desktop computer; the mini program covers the whole workflow.",
    "Schools with many students often let the vice team leader own {topic} while the team leader supervises.",
    "When in doubt about {topic}, re-read this section before writing to the liaison team.",
    "The behavior described here for {topic} is the same for every school and every area.",
    "Changes to how {topic} works are announced inside the app at least one exam in advance.",
]

# slug -> (question, key sentence, topic phrase, filler sentences)
GUIDE_TOPICS: list[tuple[str, str, str, str, list[str]]] = [
    (
        "uploading",
        "How do I upload answer sheets for my students?",
        "To upload answer sheets, open the mini program, tap the Upload tab, "
        "choose the current exam, and submit one clear photo for every page.",
        "uploading answer sheets",
        [
            "Uploads are grouped per student, so finish one student before starting the next.",
            "The app shows a green check next to every page that was stored successfully.",
            "If an upload stalls, leave the page open until the progress bar completes.",
            "Team leaders and vice team leaders share the same upload workflow.",
            "You can re-upload a page any time before the upload deadline passes.",
            "A counter at the top of the Upload tab shows how many sheets remain.",
        ],
    ),
    (
        "marking",
        "How do I mark the answer sheets assigned to me?",
        "To mark assigned sheets, open the Marking tab, pick your assigned "
        "question, and enter a score for each uploaded page before the marking deadline.",
        "marking assigned sheets",
        [
            "Marking assignments are distributed after uploads close for the exam.",
            "Each marker sees only the question that was assigned to their account.",
            "Use the zoom gesture to inspect handwriting before deciding a score.",
            "Scores are saved immediately, and the next sheet loads automatically.",
            "A progress ring shows how much of your marking assignment is finished.",
            "If a sheet is unreadable, flag it instead of guessing a score.",
        ],
    ),
    (
        "grades",
        "Where can I check the grades of my students?",
        "Student grades appear under the Results tab within three days after "
        "marking closes, listed per student and per question.",
        "checking student grades",
        [
            "Grades stay hidden while arbitration of flagged sheets is still running.",
            "Each row in the results list can be expanded to show per page scores.",
            "Export is not supported inside the app; take screenshots if you need copies.",
            "Only the team leader who registered a student can see that student's grades.",
            "Historical exams remain visible under the same tab for one year.",
            "Ranking across schools is published separately from raw grades.",
        ],
    ),
    (
        "registration",
        "When is the registration deadline for the next exam?",
        "Registration closes seven days before the exam date, and late "
        "registrations are not accepted by the platform.",
        "registering students",
        [
            "Each exam page shows its own registration countdown near the title.",
            "Registering a student takes one minute per student inside the app.",
            "Student details can be edited freely until registration closes.",
            "The roster locks automatically at the deadline with no exceptions.",
            "Schools joining for the first time should register a test student early.",
            "The number of students you may register is not limited by your upload limit.",
        ],
    ),
    (
        "photo-quality",
        "What are the requirements for answer sheet photos?",
        "Each photo must be sharp, well lit, under five megabytes, and show "
        "the full page including the student barcode.",
        "answer sheet photos",
        [
            "Avoid shadows across the page; daylight from a window works best.",
            "The app compresses photos slightly but rejects files that are too large.",
            "Retake any photo where the barcode corner is covered by a finger.",
            "Dark or blurry photos are the most common reason markers flag a sheet.",
            "A plain dark table surface under the page improves contrast noticeably.",
            "Portrait orientation matches the sheet layout and avoids cropping.",
        ],
    ),
    (
        "subject-change",
        "How can I change which question I am marking in the app?",
        "You can switch your marking question from the Profile tab, or ask "
        "the assistant to change your marking subject for you.",
        "changing the marking question",
        [
            "Subject changes are allowed until marking assignments are distributed.",
            "Your current marking question is shown at the top of the Marking tab.",
            "Changing the subject does not affect sheets you have already marked.",
            "Arbiters keep their arbitration role regardless of the chosen question.",
            "Pick the question closest to what you teach for the fastest marking.",
            "The change takes effect immediately and needs no approval step.",
        ],
    ),
    (
        "exam-day",
        "What is the schedule on exam day?",
        "On exam day the papers are released at nine in the morning and "
        "answer sheets must be uploaded within two hours of the finish.",
        "the exam day schedule",
        [
            "Print the papers as soon as they are released to avoid a rush.",
            "The exam itself runs for three hours in one sitting.",
            "Students hand their sheets to the team leader right after the finish.",
            "Start uploading while collecting sheets instead of waiting for the full stack.",
            "The upload window closes automatically; plan for slow networks.",
            "Liaison members are on call during the whole exam window.",
        ],
    ),
    (
        "results-timeline",
        "When are the final results published?",
        "Final results are published on the platform ten days after the exam, "
        "once arbitration of disputed scores has finished.",
        "the publication of results",
        [
            "Provisional scores may appear earlier but can still change.",
            "Arbitration handles sheets where two markers disagreed strongly.",
            "You will see a notice inside the app when results become final.",
            "Prize thresholds are decided after the final score table is frozen.",
            "Requests to re-check a score must be filed within two days of publication.",
            "Statistics for the whole exam are released together with the results.",
        ],
    ),
    (
        "support",
        "How do I contact the liaison team for help?",
        "You can reach the liaison team through the Feedback form in the mini "
        "program, and they reply within one working day.",
        "contacting the liaison team",
        [
            "Describe what you tapped and what you expected when filing feedback.",
            "Urgent exam day problems are answered faster than general questions.",
            "The feedback form accepts screenshots as attachments.",
            "The liaison team cannot change scores; they route such requests to arbiters.",
            "Feature suggestions are collected and reviewed after each exam cycle.",
            "You can review your past feedback threads in the same form.",
        ],
    ),
    (
        "approval",
        "Why is my account not approved yet?",
        "New accounts are reviewed by an administrator, and you will be "
        "approved once your school affiliation has been confirmed.",
        "account approval",
        [
            "Approval usually completes within two working days of registration.",
            "Unapproved accounts can browse the guide but cannot upload or mark.",
            "Make sure your school name matches the official school list.",
            "The administrator may contact your school to confirm the affiliation.",
            "Approval status is visible to the assistant when you ask about your account.",
            "If approval takes longer than a week, contact the liaison team.",
        ],
    ),
    (
        "upload-limit",
        "What does the upload limit on my account mean?",
        "The upload limit is the maximum number of answer sheets your account "
        "may submit for one exam, and an administrator or the assistant can change it.",
        "the upload limit",
        [
            "The limit protects the marking pool from accidental duplicate uploads.",
            "Your remaining quota is shown next to the counter on the Upload tab.",
            "Deleting a wrong upload returns that sheet to your quota.",
            "Limits are set per account, not per school.",
            "A limit of zero means the account is not expected to upload at all.",
            "Raising the limit takes effect immediately for the current exam.",
        ],
    ),
    (
        "prizes",
        "How do I download prize certificates for my students?",
        "Prize certificates can be downloaded from the Results tab as PDF "
        "files once prizes have been confirmed.",
        "prize certificates",
        [
            "Certificates carry the student name exactly as registered.",
            "Report a misspelled name before downloading; reissues take a week.",
            "Each certificate has a verification code printed in the corner.",
            "Prize levels follow the thresholds announced with the final results.",
            "Certificates remain downloadable for one year after the exam.",
            "Schools may print the PDF files without any extra permission.",
        ],
    ),
]


@dataclass(frozen=True)
class FixturePaths:
    root: Path
    seed_bundle: Path
    guides_dir: Path
    dataset: Path
    transcripts_dir: Path
    config: Path
    pricing: Path
    baseline_ledger: Path


def _build_tables(rng: random.Random) -> Tables:
    tables = empty_tables()
    for area_id, name in AREAS:
        tables["cmf_tp_area"][area_id] = {"id": area_id, "area": name}
    for school_id, area_id, name in SCHOOLS:
        tables["cmf_tp_school"][school_id] = {
            "id": school_id, "area": area_id, "school_name": name,
        }
    tables["cmf_tp_exam"][1] = {
        "id": 1, "status": 1, "title": "Spring Simulated Olympiad",
        "type": 1, "show": 1, "create_time": "2024-02-01 09:00:00",
    }
    tables["cmf_tp_exam"][2] = {
        "id": 2, "status": 0, "title": "Autumn Simulated Olympiad",
        "type": 1, "show": 0, "create_time": "2024-08-01 09:00:00",
    }
    for subject_id in range(1, 9):
        tables["cmf_tp_subject"][subject_id] = {
            "id": subject_id, "p_id": 1, "subject": subject_id, "image": f"q{subject_id}.png",
            "grade": 0, "status": 1,
            "create_time": "2024-02-02 09:00:00",
        }

    def stamp() -> str:
        return (
            f"2024-0{rng.randint(1, 3)}-{rng.randint(10, 28):02d} "
            f"{rng.randint(8, 21):02d}:{rng.randint(0, 59):02d}:00"
        )

    for member_id, nickname, user_name, school_id, subject, status, type_code, limit in ANCHOR_MEMBERS:
        tables["cmf_tp_member"][member_id] = {
            "id": member_id, "p_id": 1, "user_name": user_name, "school_id": school_id,
            "subject": subject, "status": status, "type": type_code, "limit": limit,
            "create_time": stamp(), "nickname": nickname,
        }
    used_nicknames = {m[1] for m in ANCHOR_MEMBERS}
    for member_id in range(7, 13):
        while True:
            nickname = f"{rng.choice(NICK_WORDS)}_{rng.randint(10, 99)}"
            if nickname not in used_nicknames:
                used_nicknames.add(nickname)
                break
        tables["cmf_tp_member"][member_id] = {
            "id": member_id,
            "p_id": 1,
            "user_name": f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}",
            "school_id": rng.randint(1, 4),
            "subject": rng.randint(1, 8),
            "status": 1,
            "type": rng.choice([1, 1, 2, 3]),
            "limit": rng.randint(2, 16),
            "create_time": stamp(),
            "nickname": nickname,
        }
    tables["cmf_tp_admin"][1] = {"id": 1, "user_id": 2}

    member_ids = sorted(tables["cmf_tp_member"])
    names = list(STUDENT_NAMES)
    rng.shuffle(names)
    for student_id in range(1, 31):
        owner = rng.choice(member_ids)
        tables["cmf_tp_student"][student_id] = {
            "id": student_id,
            "user_id": owner,
            "name": names[student_id - 1],
            "school": tables["cmf_tp_member"][owner]["school_id"],
            "grade": rng.randint(10, 12),
            "prize": rng.choice(["", "", "", "second prize", "first prize"]),
        }
    for paper_id in range(1, 11):
        owner = rng.choice(member_ids)
        tables["cmf_tp_test_paper"][paper_id] = {
            "id": paper_id, "p_id": 1, "user_id": owner,
            "student_id": rng.randint(1, 30), "score": rng.randint(0, 60),
            "eight": rng.randint(0, 1), "two": rng.randint(0, 1),
            "create_time": stamp(),
        }
    for correct_id in range(1, 9):
        tables["cmf_tp_correct"][correct_id] = {
            "id": correct_id, "user_id": rng.choice(member_ids), "p_id": 1,
            "grade": rng.randint(0, 20), "status": 1, "create_time": stamp(),
        }
    return tables


def _build_guide(rng: random.Random) -> str:
    paragraphs = [GUIDE_INTRO]
    for _, _, key, phrase, fillers in GUIDE_TOPICS:
        shuffled = list(fillers)
        rng.shuffle(shuffled)
        elaborations = [t.format(topic=phrase) for t in rng.sample(ELABORATION_TEMPLATES, 5)]
        sentences = [key] + shuffled + elaborations
        paragraphs.append(" ".join(sentences))
    tips = list(GENERIC_TIPS)
    rng.shuffle(tips)
    paragraphs.append("General advice. " + " ".join(tips))
    paragraphs.append(GUIDE_CLOSING)
    return "\n\n".join(paragraphs) + "\n"


def _script(*entries: tuple[str, str, str]) -> list[dict]:
    return [{"role": role, "match": match, "response": response} for role, match, response in entries]


def _file_qa_items() -> list[dict]:
    items = []
    callers = ["alice_tl", "bob_vice", "carol_arb", "dave_tl"]
    for i, (_, question, key, _, _) in enumerate(GUIDE_TOPICS):
        item_id = f"q-{i + 1:03d}"
        nickname = callers[i % len(callers)]
        items.append(
            {
                "id": item_id,
                "kind": "FileQA",
                "nickname": nickname,
                "query": question,
                "gold": {"type": "answer", "text": key},
                "transcript": f"transcripts/{item_id}.jsonl",
                "script": _script(
                    ("Classifier1", question, "NO"),
                    ("Classifier2", question, "1"),
                    ("Executor", question, key),
                    ("Verifier", question, "SCORE: 9\nREASON: quoted directly from the guide"),
                ),
            }
        )
    return items


def _system_qa_items() -> list[dict]:
    verifier_ok = "SCORE: 9\nREASON: matches the request and the account data"

    def basic(item_id, nickname, query, reply, gold_text):
        return {
            "id": item_id,
            "kind": "SystemQA",
            "nickname": nickname,
            "query": query,
            "gold": {"type": "answer", "text": gold_text},
            "transcript": f"transcripts/{item_id}.jsonl",
            # the Classifier2 entry is only consumed by one-level runs
            "script": _script(
                ("Classifier1", query, "YES"),
                ("Classifier2", query, "2"),
                ("Executor", query, reply),
                ("Verifier", query, verifier_ok),
            ),
        }

    def call(item_id, nickname, query, call_line, name, args, post):
        return {
            "id": item_id,
            "kind": "SystemQA",
            "nickname": nickname,
            "query": query,
            "gold": {"type": "call", "name": name, "args": args, "post": post},
            "transcript": f"transcripts/{item_id}.jsonl",
            "script": _script(
                ("Classifier1", query, "NO"),
                ("Classifier2", query, "2"),
                ("Executor", query, call_line),
                ("Verifier", query, verifier_ok),
            ),
        }

    def refusal(item_id, nickname, query, call_line):
        return {
            "id": item_id,
            "kind": "SystemQA",
            "nickname": nickname,
            "query": query,
            "gold": {"type": "refusal"},
            "transcript": f"transcripts/{item_id}.jsonl",
            "script": _script(
                ("Classifier1", query, "NO"),
                ("Classifier2", query, "2"),
                ("Executor", query, call_line),
                ("Verifier", query, verifier_ok),
            ),
        }

    return [
        basic(
            "q-013", "alice_tl", "What is my upload limit right now?",
            "Your upload limit is 8.", "upload limit is 8",
        ),
        basic(
            "q-014", "bob_vice", "Which school is my account registered under?",
            "Your account is registered under Lakeside Academy.", "Lakeside Academy",
        ),
        basic(
            "q-015", "carol_arb", "What is my user type on the platform?",
            "Your user type is arbiter.", "arbiter",
        ),
        basic(
            "q-016", "frank_tl", "Am I approved to use the online platform yet?",
            "No, your account is not approved to use the online platform yet.",
            "not approved",
        ),
        call(
            "q-017", "alice_tl", "Please raise my upload limit to 12.",
            "CALL ChangeAllTypesUploadLimit(userId=1, Limit=12)",
            "ChangeAllTypesUploadLimit", {"userId": 1, "Limit": 12},
            {"kind": "cell", "table": "cmf_tp_member", "row_id": 1, "column": "limit", "equals": 12},
        ),
        call(
            "q-018", "root_admin", "Please make dave_tl an arbiter for this exam.",
            "CALL MakeAllTypesToBeArbiter(ChangedUserId=5)",
            "MakeAllTypesToBeArbiter", {"ChangedUserId": 5},
            {"kind": "cell", "table": "cmf_tp_member", "row_id": 5, "column": "type", "equals": 3},
        ),
        call(
            "q-019", "root_admin", "Add a new school called Cedar Valley High in area South.",
            "CALL AddNewSchoolByName(userId=2, Name=Cedar Valley High, AreaName=South)",
            "AddNewSchoolByName",
            {"userId": 2, "Name": "Cedar Valley High", "AreaName": "South"},
            {
                "kind": "exists", "table": "cmf_tp_school",
                "where": {"school_name": "Cedar Valley High"},
            },
        ),
        call(
            "q-020", "alice_tl", "Change my marking subject to subject 5 please.",
            "CALL ChangeMarkingSubject(userId=1, SubjectId=5)",
            "ChangeMarkingSubject", {"userId": 1, "SubjectId": 5},
            {"kind": "cell", "table": "cmf_tp_member", "row_id": 1, "column": "subject", "equals": 5},
        ),
        call(
            "q-021", "bob_vice", "Register my student Li Hua in grade 11.",
            "CALL AddStudent(userId=3, Name=Li Hua, Grade=11)",
            "AddStudent", {"userId": 3, "Name": "Li Hua", "Grade": 11},
            {
                "kind": "exists", "table": "cmf_tp_student",
                "where": {"name": "Li Hua", "user_id": 3, "grade": 11},
            },
        ),
        call(
            "q-022", "dave_tl", "Set my upload limit to 6 for the spring exam.",
            "CALL ChangeAllTypesUploadLimit(userId=5, Limit=6)",
            "ChangeAllTypesUploadLimit", {"userId": 5, "Limit": 6},
            {"kind": "cell", "table": "cmf_tp_member", "row_id": 5, "column": "limit", "equals": 6},
        ),
        refusal(
            "q-023", "bob_vice", "Show me the teacher info for Riverdale High.",
            "CALL GetTeacherInfoBySchoolName(userId=3, SchoolName=Riverdale High)",
        ),
        refusal(
            "q-024", "carol_arb", "Set dave_tl's upload limit to 99.",
            "CALL ChangeAllTypesUploadLimit(userId=5, Limit=99)",
        ),
    ]


def _config_record() -> dict:
    return {
        "seed_bundle": "cphos-mini",
        "guides_dir": "guides",
        "templates_dir": None,
        "pricing": "pricing.json",
        "baseline_ledger": "baseline_ledger.json",
        "bindings": {
            "Classifier1": "gpt-3.5-turbo",
            "Classifier2": "gpt-3.5-turbo",
            "Executor": "gpt-3.5-turbo",
            "Verifier": "gpt-3.5-turbo",
            "Summarizer": "gpt-3.5-turbo",
            "Judge": "gpt-3.5-turbo",
        },
        "thresholds": {"start": 8, "end": 4, "max_iterations": 5},
        "classifier_mode": "TwoLevel",
        "verifier_enabled": True,
        "profiles": {
            "short": {"window_words": 60, "overlap_words": 15, "k": 2},
            "long": {"window_words": 200, "overlap_words": 50, "k": 4},
        },
        "encoder_dimension": 512,
        "provider": {"type": "scripted", "transcript": "serve_transcript.jsonl"},
        "parallelism": 1,
        "judge_mode": "NormalizedExactMatch",
    }


def generate_fixture(seed: int, out_dir: str | Path, self_check: bool = True) -> FixturePaths:
    """Write the full fixture under out_dir; deterministic in the seed."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    tables = _build_tables(rng)
    seed_bundle = root / "cphos-mini"
    dump_seed(tables, seed_bundle)

    guides_dir = root / "guides"
    guides_dir.mkdir(exist_ok=True)
    guide_text = _build_guide(rng)
    (guides_dir / "guide.txt").write_text(guide_text, encoding="utf-8")

    items = _file_qa_items() + _system_qa_items()
    transcripts_dir = root / "transcripts"
    transcripts_dir.mkdir(exist_ok=True)
    dataset_lines = []
    combined_script: list[dict] = []
    for item in items:
        script = item.pop("script")
        combined_script.extend(script)
        (transcripts_dir / f"{item['id']}.jsonl").write_text(
            "\n".join(json.dumps(entry, ensure_ascii=False, sort_keys=True) for entry in script)
            + "\n",
            encoding="utf-8",
        )
        dataset_lines.append(json.dumps(item, ensure_ascii=False, sort_keys=True))
    dataset = root / "dataset.jsonl"
    dataset.write_text("\n".join(dataset_lines) + "\n", encoding="utf-8")

    # one combined script for `serve`: a fresh copy is loaded per question and
    # entries match on the query substring, so any fixture question replays
    (root / "serve_transcript.jsonl").write_text(
        "\n".join(json.dumps(e, ensure_ascii=False, sort_keys=True) for e in combined_script)
        + "\n",
        encoding="utf-8",
    )

    pricing = root / "pricing.json"
    pricing.write_text(json.dumps(PRICING_RECORDS, indent=2) + "\n", encoding="utf-8")

    baseline = root / "baseline_ledger.json"
    baseline.write_text(
        json.dumps(
            [
                {
                    "model": "gpt-4-0125-preview",
                    "input_chars": BASELINE_PER_QUESTION[0] * N_ITEMS,
                    "output_chars": BASELINE_PER_QUESTION[1] * N_ITEMS,
                }
            ],
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )

    config = root / "config.json"
    config.write_text(json.dumps(_config_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    paths = FixturePaths(
        root=root,
        seed_bundle=seed_bundle,
        guides_dir=guides_dir,
        dataset=dataset,
        transcripts_dir=transcripts_dir,
        config=config,
        pricing=pricing,
        baseline_ledger=baseline,
    )
    _self_check(paths, guide_text, items, replay=self_check)
    return paths


def _self_check(paths: FixturePaths, guide_text: str, items: list[dict], replay: bool) -> None:
    """Generated gold must be executable and grounded before we ship it."""
    from .tools import ToolCall, build_shipped_registry, export_catalog

    store = load_seed(paths.seed_bundle)
    registry = build_shipped_registry(store)
    export_catalog(registry, paths.root / "tool_catalog.json")
    for item in items:
        profile = store.profile_by_nickname(item["nickname"])
        gold = item["gold"]
        if gold["type"] == "call":
            call = ToolCall(gold["name"], tuple(gold["args"].items()), profile.user_id)
            validated = registry.validate(call, origin="model")
            registry.authorize(validated, profile)
        elif gold["type"] == "answer" and item["kind"] == "FileQA":
            if gold["text"] not in guide_text:
                raise AssertionError(f"{item['id']}: gold answer not contained in the guide")
    if replay:
        from .evalharness import load_config, load_dataset, run_eval

        config = load_config(paths.config)
        dataset = load_dataset(paths.dataset, load_seed(paths.seed_bundle))
        report = run_eval(dataset, config, strategy_text="cev")
        if report.acc_sys != 1.0 or report.acc_file != 1.0:
            failed = [r["id"] for r in report.items if not r["correct"]]
            raise AssertionError(f"gold transcripts do not replay cleanly: {failed}")
