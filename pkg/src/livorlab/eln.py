"""Case notebook: durable, auditable storage with a lifecycle state machine.

Everything lives in one SQLite file. Mutations run as serializable
transactions that append their own audit entry, so the audit sequence is
gap-free by construction. Measurements, analyses, stored spectra, and the
audit trail are additionally shielded by UPDATE/DELETE triggers: even raw
SQL cannot rewrite history. Spectra are kept as the exact decimal text
they were ingested with; bit-exact round trips are defined on that text.
"""

from __future__ import annotations

import fcntl
import hashlib
import hmac
import json
import math
import secrets
import sqlite3
import threading
import uuid
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping

from . import __version__
from .errors import (
    CaseClosed,
    CaseNotFound,
    IllegalTransition,
    ImmutableRecord,
    JobNotFound,
    MeasurementNotFound,
    StoreError,
    StoreLocked,
    Unauthorized,
    ValidationFailed,
)
from .spectral import (
    Spectrum,
    SpectrumKind,
    normalize_reflectance,
    read_spectrum_csv,
    write_spectrum_csv,
)

SCHEMA_VERSION = 1
SESSION_TTL_SECONDS = 12 * 3600
PAGE_SIZE = 50

# scrypt cost: memory-hard enough to hurt offline guessing, light enough
# for an interactive login on modest hardware
_SCRYPT_N = 2 ** 14
_SCRYPT_R = 8
_SCRYPT_P = 1


class DuplicateExternalRefWarning(UserWarning):
    """A new case reuses an external_ref that already exists."""


class CaseState(Enum):
    OPEN = "Open"
    MEASURED = "Measured"
    ANALYSED = "Analysed"
    REVIEWED = "Reviewed"
    CLOSED = "Closed"


class Role(Enum):
    OPERATOR = "Operator"
    ANALYST = "Analyst"
    REVIEWER = "Reviewer"
    ADMIN = "Admin"


_ROLE_RANK = {Role.OPERATOR: 0, Role.ANALYST: 1, Role.REVIEWER: 2,
              Role.ADMIN: 3}


class AuditAction(Enum):
    CREATE = "Create"
    TRANSITION = "Transition"
    INGEST = "Ingest"
    ANALYSE = "Analyse"
    LOGIN = "Login"
    DENIED = "Denied"


class JobStatus(Enum):
    QUEUED = "Queued"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"


_FORWARD = {
    CaseState.OPEN: CaseState.MEASURED,
    CaseState.MEASURED: CaseState.ANALYSED,
    CaseState.ANALYSED: CaseState.REVIEWED,
    CaseState.REVIEWED: CaseState.CLOSED,
}


def transition_allowed(src: CaseState, dst: CaseState) -> bool:
    """One step forward, or straight to Closed from any open state."""
    if dst is CaseState.CLOSED:
        return src is not CaseState.CLOSED
    return _FORWARD.get(src) is dst


@dataclass(frozen=True)
class InstrumentMetadata:
    device: str = "MCS 400"
    light_source: str = "halogen, illuminant D65"
    geometry: str = "45/45"
    spot_diameter_mm: float = 5.0
    white_standard: str = "compressed barium sulphate, ISO 7724-2"

    def __post_init__(self):
        d = float(self.spot_diameter_mm)
        object.__setattr__(self, "spot_diameter_mm", d)
        if not (math.isfinite(d) and d > 0.0):
            raise ValidationFailed("spot diameter must be finite and > 0")

    def to_dict(self) -> dict:
        return {
            "device": self.device,
            "light_source": self.light_source,
            "geometry": self.geometry,
            "spot_diameter_mm": self.spot_diameter_mm,
            "white_standard": self.white_standard,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "InstrumentMetadata":
        try:
            return cls(
                device=str(data.get("device", cls.device)),
                light_source=str(data.get("light_source", cls.light_source)),
                geometry=str(data.get("geometry", cls.geometry)),
                spot_diameter_mm=float(
                    data.get("spot_diameter_mm", cls.spot_diameter_mm)),
                white_standard=str(
                    data.get("white_standard", cls.white_standard)),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationFailed(f"bad instrument metadata: {exc}") from exc


@dataclass(frozen=True)
class User:
    user_id: str
    display_name: str
    role: Role
    credential_hash: str = field(repr=False, default="")


@dataclass(frozen=True)
class Case:
    case_id: str
    external_ref: str
    body_site: str
    postmortem_interval_hours: float | None
    notes: str
    state: CaseState
    created_at: str
    updated_at: str


@dataclass(frozen=True)
class MeasurementRecord:
    measurement_id: str
    case_id: str
    sample_ref: str
    white_ref: str
    dark_ref: str
    reflectance_ref: str
    instrument: InstrumentMetadata
    operator_id: str
    recorded_at: str


@dataclass(frozen=True)
class AnalysisRecord:
    analysis_id: str
    measurement_id: str
    config: dict
    result: dict
    engine_version: str
    created_at: str
    created_by: str


@dataclass(frozen=True)
class AuditEntry:
    sequence_number: int
    actor: str
    action: AuditAction
    target_id: str
    at: str
    detail: str


@dataclass(frozen=True)
class AnalysisJob:
    job_id: str
    measurement_id: str
    config: dict
    status: JobStatus
    submitted_by: str
    submitted_at: str
    finished_at: str | None = None
    result_ref: str | None = None
    error: str | None = None

    def __post_init__(self):
        if self.status is JobStatus.DONE and not self.result_ref:
            raise ValueError("a Done job must reference its record")
        if self.status is JobStatus.FAILED and not self.error:
            raise ValueError("a Failed job must carry an error message")


def hash_credential(password: str) -> str:
    salt = secrets.token_bytes(16)
    digest = hashlib.scrypt(password.encode(), salt=salt, n=_SCRYPT_N,
                            r=_SCRYPT_R, p=_SCRYPT_P)
    return "$".join(("scrypt", str(_SCRYPT_N), str(_SCRYPT_R),
                     str(_SCRYPT_P), salt.hex(), digest.hex()))


def verify_credential(password: str, stored: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, digest_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        digest = hashlib.scrypt(password.encode(),
                                salt=bytes.fromhex(salt_hex),
                                n=int(n), r=int(r), p=int(p))
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex}"


_IMMUTABLE_TABLES = ("spectra", "measurements", "analyses", "audit")

_SCHEMA = """
CREATE TABLE meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE users (
    user_id TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    role TEXT NOT NULL CHECK (role IN
        ('Operator', 'Analyst', 'Reviewer', 'Admin')),
    credential_hash TEXT NOT NULL
);
CREATE TABLE sessions (
    token TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(user_id),
    expires_at TEXT NOT NULL
);
CREATE TABLE cases (
    case_id TEXT PRIMARY KEY,
    external_ref TEXT NOT NULL DEFAULT '',
    body_site TEXT NOT NULL DEFAULT '',
    postmortem_interval_hours REAL,
    notes TEXT NOT NULL DEFAULT '',
    state TEXT NOT NULL CHECK (state IN
        ('Open', 'Measured', 'Analysed', 'Reviewed', 'Closed')),
    created_at TEXT NOT NULL,
    updated_at TEXT NOT NULL
);
CREATE TABLE spectra (
    spectrum_id TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    csv TEXT NOT NULL
);
CREATE TABLE measurements (
    measurement_id TEXT PRIMARY KEY,
    case_id TEXT NOT NULL REFERENCES cases(case_id),
    sample_ref TEXT NOT NULL REFERENCES spectra(spectrum_id),
    white_ref TEXT NOT NULL REFERENCES spectra(spectrum_id),
    dark_ref TEXT NOT NULL REFERENCES spectra(spectrum_id),
    reflectance_ref TEXT NOT NULL REFERENCES spectra(spectrum_id),
    instrument_json TEXT NOT NULL,
    operator_id TEXT NOT NULL,
    recorded_at TEXT NOT NULL
);
CREATE TABLE analyses (
    analysis_id TEXT PRIMARY KEY,
    measurement_id TEXT NOT NULL REFERENCES measurements(measurement_id),
    config_json TEXT NOT NULL,
    result_json TEXT NOT NULL,
    engine_version TEXT NOT NULL,
    created_at TEXT NOT NULL,
    created_by TEXT NOT NULL
);
CREATE TABLE audit (
    sequence_number INTEGER PRIMARY KEY,
    actor TEXT NOT NULL,
    action TEXT NOT NULL CHECK (action IN
        ('Create', 'Transition', 'Ingest', 'Analyse', 'Login', 'Denied')),
    target_id TEXT NOT NULL DEFAULT '',
    at TEXT NOT NULL,
    detail TEXT NOT NULL DEFAULT ''
);
CREATE TABLE jobs (
    job_id TEXT PRIMARY KEY,
    measurement_id TEXT NOT NULL REFERENCES measurements(measurement_id),
    config_json TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN
        ('Queued', 'Running', 'Done', 'Failed')),
    submitted_by TEXT NOT NULL,
    submitted_at TEXT NOT NULL,
    finished_at TEXT,
    result_ref TEXT,
    error TEXT,
    idempotency_key TEXT UNIQUE
);
CREATE INDEX idx_cases_order ON cases (created_at DESC, case_id);
CREATE INDEX idx_measurements_case ON measurements (case_id, recorded_at);
CREATE INDEX idx_analyses_measurement ON analyses
    (measurement_id, created_at);
CREATE INDEX idx_audit_target ON audit (target_id, sequence_number);
CREATE INDEX idx_jobs_status ON jobs (status, submitted_at);
"""


def _trigger_ddl() -> str:
    parts = []
    for table in _IMMUTABLE_TABLES:
        for verb in ("UPDATE", "DELETE"):
            parts.append(
                f"CREATE TRIGGER {table}_no_{verb.lower()} "
                f"BEFORE {verb} ON {table} BEGIN "
                f"SELECT RAISE(ABORT, '{table} rows are immutable'); "
                f"END;")
    return "\n".join(parts)


class StoreLock:
    """Advisory single-writer lock next to the store file."""

    def __init__(self, store_path: str | Path):
        self._path = Path(str(store_path) + ".lock")
        self._fd = None

    def acquire(self, purpose: str = "") -> None:
        fd = open(self._path, "a+")
        try:
            fcntl.flock(fd.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            holder = ""
            try:
                fd.seek(0)
                holder = fd.read(200).strip()
            except OSError:
                pass
            fd.close()
            raise StoreLocked(
                f"store is locked{' by ' + holder if holder else ''}")
        fd.seek(0)
        fd.truncate()
        fd.write(purpose or "in use")
        fd.flush()
        self._fd = fd

    def release(self) -> None:
        if self._fd is not None:
            fcntl.flock(self._fd.fileno(), fcntl.LOCK_UN)
            self._fd.close()
            self._fd = None

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()


class Store:
    """One notebook database; safe for concurrent threads."""

    def __init__(self, path: str | Path):
        self._path = str(path)
        self._local = threading.local()
        con = self._conn()
        row = con.execute(
            "SELECT name FROM sqlite_master WHERE name = 'meta'").fetchone()
        if row is None:
            con.executescript("BEGIN;" + _SCHEMA + _trigger_ddl()
                              + "COMMIT;")
            con.execute(
                "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                (str(SCHEMA_VERSION),))
            con.commit()
        else:
            found = con.execute(
                "SELECT value FROM meta WHERE key = 'schema_version'"
            ).fetchone()
            if found is None or int(found[0]) != SCHEMA_VERSION:
                raise StoreError(
                    f"unsupported store schema "
                    f"{found[0] if found else 'missing'!r}")

    @property
    def path(self) -> str:
        return self._path

    def _conn(self) -> sqlite3.Connection:
        con = getattr(self._local, "con", None)
        if con is None:
            con = sqlite3.connect(self._path, isolation_level=None,
                                  timeout=30.0)
            con.row_factory = sqlite3.Row
            con.execute("PRAGMA journal_mode=WAL")
            con.execute("PRAGMA foreign_keys=ON")
            con.execute("PRAGMA busy_timeout=30000")
            con.execute("PRAGMA synchronous=FULL")
            self._local.con = con
        return con

    def close(self) -> None:
        con = getattr(self._local, "con", None)
        if con is not None:
            con.close()
            self._local.con = None

    @contextmanager
    def _write(self):
        con = self._conn()
        con.execute("BEGIN IMMEDIATE")
        try:
            yield con
        except BaseException:
            con.execute("ROLLBACK")
            raise
        con.execute("COMMIT")

    # --- audit -----------------------------------------------------------

    def _append_audit(self, con, actor: str, action: AuditAction,
                      target_id: str, detail: str) -> int:
        cur = con.execute(
            "INSERT INTO audit (actor, action, target_id, at, detail) "
            "VALUES (?, ?, ?, ?, ?)",
            (actor, action.value, target_id, _utcnow(), detail))
        return int(cur.lastrowid)

    def record_denied(self, actor_label: str, detail: str,
                      target_id: str = "") -> None:
        """Append a Denied entry without raising; for boundary layers."""
        with self._write() as con:
            self._append_audit(con, actor_label, AuditAction.DENIED,
                               target_id, detail)

    def _deny(self, actor: User | None, detail: str,
              target_id: str = "") -> None:
        label = actor.user_id if actor is not None else "anonymous"
        self.record_denied(label, detail, target_id)
        raise Unauthorized(detail)

    def _require(self, actor: User | None, minimum: Role, doing: str,
                 target_id: str = "") -> User:
        if actor is None:
            self._deny(None, f"unauthenticated caller may not {doing}",
                       target_id)
        if _ROLE_RANK[actor.role] < _ROLE_RANK[minimum]:
            self._deny(actor,
                       f"role {actor.role.value} may not {doing}",
                       target_id)
        return actor

    def check_role(self, actor: User | None, minimum: Role, doing: str,
                   target_id: str = "") -> User:
        """Gate an operation: records a Denied entry and raises when the
        actor is missing or below the minimum role."""
        return self._require(actor, minimum, doing, target_id)

    def audit_trail(self, actor: User | None, *, target_id: str | None = None,
                    page: int = 1,
                    page_size: int = PAGE_SIZE) -> list[AuditEntry]:
        self._require(actor, Role.REVIEWER, "read the audit trail")
        q = ("SELECT * FROM audit "
             + ("WHERE target_id = ? " if target_id is not None else "")
             + "ORDER BY sequence_number LIMIT ? OFFSET ?")
        args = ([target_id] if target_id is not None else []) + [
            page_size, (max(page, 1) - 1) * page_size]
        rows = self._conn().execute(q, args).fetchall()
        return [AuditEntry(
            sequence_number=row["sequence_number"], actor=row["actor"],
            action=AuditAction(row["action"]), target_id=row["target_id"],
            at=row["at"], detail=row["detail"]) for row in rows]

    # --- users and sessions ----------------------------------------------

    def bootstrap_admin(self, user_id: str, display_name: str,
                        password: str) -> User:
        """First user of a fresh store; refuses once any user exists."""
        with self._write() as con:
            if con.execute("SELECT 1 FROM users LIMIT 1").fetchone():
                raise Unauthorized("store already has users")
            con.execute(
                "INSERT INTO users VALUES (?, ?, ?, ?)",
                (user_id, display_name, Role.ADMIN.value,
                 hash_credential(password)))
            self._append_audit(con, "system", AuditAction.CREATE, user_id,
                               "bootstrap admin")
        return User(user_id, display_name, Role.ADMIN)

    def add_user(self, actor: User | None, user_id: str, display_name: str,
                 role: Role, password: str) -> User:
        self._require(actor, Role.ADMIN, "manage users", user_id)
        if not user_id:
            raise ValidationFailed("user_id must not be empty")
        with self._write() as con:
            if con.execute("SELECT 1 FROM users WHERE user_id = ?",
                           (user_id,)).fetchone():
                raise ValidationFailed(f"user {user_id!r} already exists")
            con.execute(
                "INSERT INTO users VALUES (?, ?, ?, ?)",
                (user_id, display_name, role.value,
                 hash_credential(password)))
            self._append_audit(con, actor.user_id, AuditAction.CREATE,
                               user_id, f"user created with role "
                               f"{role.value}")
        return User(user_id, display_name, role)

    def get_user(self, user_id: str) -> User | None:
        row = self._conn().execute(
            "SELECT * FROM users WHERE user_id = ?", (user_id,)).fetchone()
        if row is None:
            return None
        return User(row["user_id"], row["display_name"], Role(row["role"]),
                    row["credential_hash"])

    def login(self, user_id: str, password: str,
              ttl_seconds: int = SESSION_TTL_SECONDS) -> tuple[str, str,
                                                               User]:
        """Verify credentials and mint a session (token, expires_at)."""
        user = self.get_user(user_id)
        if user is None or not verify_credential(password,
                                                 user.credential_hash):
            self.record_denied(user_id or "anonymous", "bad credentials")
            raise Unauthorized("bad credentials")
        token = secrets.token_urlsafe(32)
        expires = (datetime.now(timezone.utc)
                   + timedelta(seconds=ttl_seconds)).isoformat(
                       timespec="microseconds")
        with self._write() as con:
            con.execute("INSERT INTO sessions VALUES (?, ?, ?)",
                        (token, user_id, expires))
            con.execute("DELETE FROM sessions WHERE expires_at < ?",
                        (_utcnow(),))
            self._append_audit(con, user_id, AuditAction.LOGIN, user_id,
                               "session opened")
        return token, expires, User(user.user_id, user.display_name,
                                    user.role)

    def resolve_session(self, token: str) -> User | None:
        row = self._conn().execute(
            "SELECT u.user_id, u.display_name, u.role "
            "FROM sessions s JOIN users u ON u.user_id = s.user_id "
            "WHERE s.token = ? AND s.expires_at > ?",
            (token, _utcnow())).fetchone()
        if row is None:
            return None
        return User(row["user_id"], row["display_name"], Role(row["role"]))

    # --- cases -----------------------------------------------------------

    def _row_to_case(self, row) -> Case:
        return Case(
            case_id=row["case_id"], external_ref=row["external_ref"],
            body_site=row["body_site"],
            postmortem_interval_hours=row["postmortem_interval_hours"],
            notes=row["notes"], state=CaseState(row["state"]),
            created_at=row["created_at"], updated_at=row["updated_at"])

    def create_case(self, actor: User | None, *, external_ref: str = "",
                    body_site: str = "",
                    postmortem_interval_hours: float | None = None,
                    notes: str = "") -> Case:
        self._require(actor, Role.OPERATOR, "create cases")
        if postmortem_interval_hours is not None:
            pmi = float(postmortem_interval_hours)
            if not (math.isfinite(pmi) and pmi >= 0.0):
                raise ValidationFailed(
                    "postmortem interval must be finite and >= 0")
            postmortem_interval_hours = pmi
        case_id = _new_id("case")
        now = _utcnow()
        with self._write() as con:
            duplicate = bool(external_ref) and con.execute(
                "SELECT 1 FROM cases WHERE external_ref = ? LIMIT 1",
                (external_ref,)).fetchone()
            con.execute(
                "INSERT INTO cases VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (case_id, external_ref, body_site,
                 postmortem_interval_hours, notes, CaseState.OPEN.value,
                 now, now))
            detail = f"case opened ({body_site or 'no site'})"
            if duplicate:
                detail += f"; external_ref {external_ref!r} already in use"
            self._append_audit(con, actor.user_id, AuditAction.CREATE,
                               case_id, detail)
        if duplicate:
            warnings.warn(
                f"external_ref {external_ref!r} already used by another "
                f"case", DuplicateExternalRefWarning, stacklevel=2)
        return Case(case_id, external_ref, body_site,
                    postmortem_interval_hours, notes, CaseState.OPEN, now,
                    now)

    def get_case(self, case_id: str) -> Case:
        row = self._conn().execute(
            "SELECT * FROM cases WHERE case_id = ?", (case_id,)).fetchone()
        if row is None:
            raise CaseNotFound(f"no case {case_id!r}")
        return self._row_to_case(row)

    def transition_case(self, actor: User | None, case_id: str,
                        target: CaseState) -> Case:
        minimum = (Role.REVIEWER
                   if target in (CaseState.REVIEWED, CaseState.CLOSED)
                   else Role.OPERATOR)
        self._require(actor, minimum,
                      f"transition cases to {target.value}", case_id)
        with self._write() as con:
            row = con.execute("SELECT * FROM cases WHERE case_id = ?",
                              (case_id,)).fetchone()
            if row is None:
                raise CaseNotFound(f"no case {case_id!r}")
            case = self._row_to_case(row)
            if not transition_allowed(case.state, target):
                raise IllegalTransition(
                    f"{case.state.value} -> {target.value} is not an edge "
                    f"of the case lifecycle")
            now = max(_utcnow(), case.updated_at)
            con.execute(
                "UPDATE cases SET state = ?, updated_at = ? "
                "WHERE case_id = ?", (target.value, now, case_id))
            self._append_audit(
                con, actor.user_id, AuditAction.TRANSITION, case_id,
                f"{case.state.value} -> {target.value}")
        return self.get_case(case_id)

    def query_cases(self, actor: User | None, *,
                    state: CaseState | None = None,
                    body_site: str | None = None,
                    created_from: str | None = None,
                    created_to: str | None = None,
                    text: str | None = None,
                    page: int = 1,
                    page_size: int = PAGE_SIZE) -> list[Case]:
        self._require(actor, Role.OPERATOR, "browse cases")
        clauses, args = [], []
        if state is not None:
            clauses.append("state = ?")
            args.append(state.value)
        if body_site is not None:
            clauses.append("body_site = ?")
            args.append(body_site)
        if created_from is not None:
            clauses.append("created_at >= ?")
            args.append(created_from)
        if created_to is not None:
            clauses.append("created_at <= ?")
            args.append(created_to)
        if text:
            clauses.append(
                "(external_ref LIKE ? OR body_site LIKE ? OR notes LIKE ?)")
            args.extend([f"%{text}%"] * 3)
        where = ("WHERE " + " AND ".join(clauses) + " ") if clauses else ""
        args.extend([page_size, (max(page, 1) - 1) * page_size])
        rows = self._conn().execute(
            "SELECT * FROM cases " + where
            + "ORDER BY created_at DESC, case_id LIMIT ? OFFSET ?",
            args).fetchall()
        return [self._row_to_case(r) for r in rows]

    # --- measurements ----------------------------------------------------

    def _insert_spectrum(self, con, spectrum_id: str, kind: str,
                         csv_text: str) -> None:
        con.execute("INSERT INTO spectra VALUES (?, ?, ?)",
                    (spectrum_id, kind, csv_text))

    def attach_measurement(self, actor: User | None, case_id: str,
                           sample_csv: str, white_csv: str, dark_csv: str,
                           instrument: InstrumentMetadata | None = None,
                           ) -> MeasurementRecord:
        """Ingest one raw bundle and its derived reflectance, atomically.

        The three raw texts are stored verbatim; the derived reflectance
        is serialized with shortest round-trip decimals. Any failure
        leaves the store untouched.
        """
        actor = self._require(actor, Role.OPERATOR, "attach measurements",
                              case_id)
        instrument = instrument or InstrumentMetadata()
        sample = read_spectrum_csv(sample_csv)
        white = read_spectrum_csv(white_csv)
        dark = read_spectrum_csv(dark_csv)
        try:
            reflectance = normalize_reflectance(sample, white, dark)
        except ValueError as exc:
            raise ValidationFailed(str(exc)) from exc
        reflectance_csv = write_spectrum_csv(reflectance)
        measurement_id = _new_id("meas")
        now = _utcnow()
        refs = {name: _new_id("spec") for name in
                ("sample", "white", "dark", "reflectance")}
        with self._write() as con:
            row = con.execute("SELECT * FROM cases WHERE case_id = ?",
                              (case_id,)).fetchone()
            if row is None:
                raise CaseNotFound(f"no case {case_id!r}")
            case = self._row_to_case(row)
            if case.state is CaseState.CLOSED:
                raise CaseClosed(f"case {case_id!r} is closed")
            self._insert_spectrum(con, refs["sample"], "raw_counts",
                                  sample_csv)
            self._insert_spectrum(con, refs["white"], "raw_counts",
                                  white_csv)
            self._insert_spectrum(con, refs["dark"], "raw_counts",
                                  dark_csv)
            self._insert_spectrum(con, refs["reflectance"], "reflectance",
                                  reflectance_csv)
            con.execute(
                "INSERT INTO measurements VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (measurement_id, case_id, refs["sample"], refs["white"],
                 refs["dark"], refs["reflectance"],
                 json.dumps(instrument.to_dict(), sort_keys=True),
                 actor.user_id, now))
            detail = f"measurement on {instrument.device}"
            if case.state is CaseState.OPEN:
                con.execute(
                    "UPDATE cases SET state = ?, updated_at = ? "
                    "WHERE case_id = ?",
                    (CaseState.MEASURED.value, max(now, case.updated_at),
                     case_id))
                detail += "; case Open -> Measured"
            self._append_audit(con, actor.user_id, AuditAction.INGEST,
                               measurement_id, detail)
        return MeasurementRecord(
            measurement_id, case_id, refs["sample"], refs["white"],
            refs["dark"], refs["reflectance"], instrument, actor.user_id,
            now)

    def _row_to_measurement(self, row) -> MeasurementRecord:
        return MeasurementRecord(
            measurement_id=row["measurement_id"], case_id=row["case_id"],
            sample_ref=row["sample_ref"], white_ref=row["white_ref"],
            dark_ref=row["dark_ref"],
            reflectance_ref=row["reflectance_ref"],
            instrument=InstrumentMetadata.from_dict(
                json.loads(row["instrument_json"])),
            operator_id=row["operator_id"], recorded_at=row["recorded_at"])

    def get_measurement(self, measurement_id: str) -> MeasurementRecord:
        row = self._conn().execute(
            "SELECT * FROM measurements WHERE measurement_id = ?",
            (measurement_id,)).fetchone()
        if row is None:
            raise MeasurementNotFound(f"no measurement {measurement_id!r}")
        return self._row_to_measurement(row)

    def list_measurements(self, case_id: str) -> list[MeasurementRecord]:
        rows = self._conn().execute(
            "SELECT * FROM measurements WHERE case_id = ? "
            "ORDER BY recorded_at, measurement_id", (case_id,)).fetchall()
        return [self._row_to_measurement(r) for r in rows]

    def get_spectrum_text(self, spectrum_ref: str) -> str:
        row = self._conn().execute(
            "SELECT csv FROM spectra WHERE spectrum_id = ?",
            (spectrum_ref,)).fetchone()
        if row is None:
            raise StoreError(f"no stored spectrum {spectrum_ref!r}")
        return row["csv"]

    def read_spectrum(self, spectrum_ref: str) -> Spectrum:
        row = self._conn().execute(
            "SELECT kind, csv FROM spectra WHERE spectrum_id = ?",
            (spectrum_ref,)).fetchone()
        if row is None:
            raise StoreError(f"no stored spectrum {spectrum_ref!r}")
        kind = (SpectrumKind.REFLECTANCE if row["kind"] == "reflectance"
                else SpectrumKind.RAW_COUNTS)
        return read_spectrum_csv(row["csv"], kind)

    # --- analyses --------------------------------------------------------

    def record_analysis(self, actor: User | None, measurement_id: str,
                        config: Mapping, result: Mapping,
                        engine_version: str = __version__) -> AnalysisRecord:
        actor = self._require(actor, Role.ANALYST, "record analyses",
                              measurement_id)
        analysis_id = _new_id("ana")
        now = _utcnow()
        with self._write() as con:
            record = self._insert_analysis(
                con, analysis_id, measurement_id, dict(config),
                dict(result), engine_version, now, actor.user_id)
            self._append_audit(
                con, actor.user_id, AuditAction.ANALYSE, analysis_id,
                f"analysis of {measurement_id}")
        return record

    def _insert_analysis(self, con, analysis_id: str, measurement_id: str,
                         config: dict, result: dict, engine_version: str,
                         now: str, created_by: str) -> AnalysisRecord:
        """Insert the record and advance the case; caller owns txn+audit."""
        row = con.execute(
            "SELECT case_id FROM measurements WHERE measurement_id = ?",
            (measurement_id,)).fetchone()
        if row is None:
            raise MeasurementNotFound(f"no measurement {measurement_id!r}")
        case_id = row["case_id"]
        con.execute(
            "INSERT INTO analyses VALUES (?, ?, ?, ?, ?, ?, ?)",
            (analysis_id, measurement_id, json.dumps(config, sort_keys=True),
             json.dumps(result, sort_keys=True), engine_version, now,
             created_by))
        case_row = con.execute("SELECT * FROM cases WHERE case_id = ?",
                               (case_id,)).fetchone()
        case = self._row_to_case(case_row)
        if case.state is CaseState.MEASURED:
            con.execute(
                "UPDATE cases SET state = ?, updated_at = ? "
                "WHERE case_id = ?",
                (CaseState.ANALYSED.value, max(now, case.updated_at),
                 case_id))
        return AnalysisRecord(analysis_id, measurement_id, config, result,
                              engine_version, now, created_by)

    def _row_to_analysis(self, row) -> AnalysisRecord:
        return AnalysisRecord(
            analysis_id=row["analysis_id"],
            measurement_id=row["measurement_id"],
            config=json.loads(row["config_json"]),
            result=json.loads(row["result_json"]),
            engine_version=row["engine_version"],
            created_at=row["created_at"], created_by=row["created_by"])

    def get_analysis(self, analysis_id: str) -> AnalysisRecord:
        row = self._conn().execute(
            "SELECT * FROM analyses WHERE analysis_id = ?",
            (analysis_id,)).fetchone()
        if row is None:
            raise StoreError(f"no analysis {analysis_id!r}")
        return self._row_to_analysis(row)

    def list_analyses(self, measurement_id: str) -> list[AnalysisRecord]:
        rows = self._conn().execute(
            "SELECT * FROM analyses WHERE measurement_id = ? "
            "ORDER BY created_at, analysis_id", (measurement_id,)).fetchall()
        return [self._row_to_analysis(r) for r in rows]

    def amend_analysis(self, *args, **kwargs):
        """Analyses are never edited; corrections are new records."""
        raise ImmutableRecord(
            "analysis records are immutable; record a superseding analysis")

    # --- jobs ------------------------------------------------------------

    def _row_to_job(self, row) -> AnalysisJob:
        return AnalysisJob(
            job_id=row["job_id"], measurement_id=row["measurement_id"],
            config=json.loads(row["config_json"]),
            status=JobStatus(row["status"]),
            submitted_by=row["submitted_by"],
            submitted_at=row["submitted_at"],
            finished_at=row["finished_at"], result_ref=row["result_ref"],
            error=row["error"])

    def submit_job(self, actor: User | None, measurement_id: str,
                   config: Mapping,
                   idempotency_key: str | None = None) -> AnalysisJob:
        """Queue an analysis; an already-seen idempotency key returns the
        original job without touching the store."""
        actor = self._require(actor, Role.ANALYST, "submit analyses",
                              measurement_id)
        if idempotency_key is not None:
            row = self._conn().execute(
                "SELECT * FROM jobs WHERE idempotency_key = ?",
                (idempotency_key,)).fetchone()
            if row is not None:
                return self._row_to_job(row)
        job_id = _new_id("job")
        now = _utcnow()
        with self._write() as con:
            if con.execute(
                    "SELECT 1 FROM measurements WHERE measurement_id = ?",
                    (measurement_id,)).fetchone() is None:
                raise MeasurementNotFound(
                    f"no measurement {measurement_id!r}")
            try:
                con.execute(
                    "INSERT INTO jobs (job_id, measurement_id, config_json,"
                    " status, submitted_by, submitted_at, idempotency_key) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (job_id, measurement_id,
                     json.dumps(dict(config), sort_keys=True),
                     JobStatus.QUEUED.value, actor.user_id, now,
                     idempotency_key))
            except sqlite3.IntegrityError:
                # lost a race on the same idempotency key
                con.execute("ROLLBACK")
                con.execute("BEGIN IMMEDIATE")
                row = con.execute(
                    "SELECT * FROM jobs WHERE idempotency_key = ?",
                    (idempotency_key,)).fetchone()
                if row is not None:
                    return self._row_to_job(row)
                raise
            self._append_audit(con, actor.user_id, AuditAction.ANALYSE,
                               job_id,
                               f"analysis queued for {measurement_id}")
        return self.get_job(job_id)

    def get_job(self, job_id: str) -> AnalysisJob:
        row = self._conn().execute(
            "SELECT * FROM jobs WHERE job_id = ?", (job_id,)).fetchone()
        if row is None:
            raise JobNotFound(f"no analysis job {job_id!r}")
        return self._row_to_job(row)

    def claim_next_job(self) -> AnalysisJob | None:
        """Atomically move the oldest eligible Queued job to Running.

        At most one Running job per measurement; later submissions wait.
        """
        with self._write() as con:
            row = con.execute(
                "SELECT job_id FROM jobs WHERE status = 'Queued' "
                "AND measurement_id NOT IN "
                "(SELECT measurement_id FROM jobs WHERE status = 'Running') "
                "ORDER BY submitted_at, job_id LIMIT 1").fetchone()
            if row is None:
                return None
            con.execute(
                "UPDATE jobs SET status = 'Running' WHERE job_id = ?",
                (row["job_id"],))
            job_id = row["job_id"]
        return self.get_job(job_id)

    def complete_job(self, job_id: str, config: Mapping, result: Mapping,
                     engine_version: str = __version__) -> AnalysisRecord:
        """Record the analysis and mark the job Done, in one transaction.

        Couples the two writes so a crash can never leave a Done job
        without its record or re-runnable work that already has one.
        """
        now = _utcnow()
        analysis_id = _new_id("ana")
        with self._write() as con:
            row = con.execute("SELECT * FROM jobs WHERE job_id = ?",
                              (job_id,)).fetchone()
            if row is None:
                raise JobNotFound(f"no analysis job {job_id!r}")
            job = self._row_to_job(row)
            if job.status is not JobStatus.RUNNING:
                raise StoreError(
                    f"job {job_id!r} is {job.status.value}, not Running")
            record = self._insert_analysis(
                con, analysis_id, job.measurement_id, dict(config),
                dict(result), engine_version, now, job.submitted_by)
            con.execute(
                "UPDATE jobs SET status = 'Done', finished_at = ?, "
                "result_ref = ? WHERE job_id = ?",
                (now, analysis_id, job_id))
            self._append_audit(
                con, job.submitted_by, AuditAction.ANALYSE, analysis_id,
                f"analysis of {job.measurement_id} (job {job_id})")
        return record

    def fail_job(self, job_id: str, error: str) -> AnalysisJob:
        now = _utcnow()
        with self._write() as con:
            row = con.execute("SELECT * FROM jobs WHERE job_id = ?",
                              (job_id,)).fetchone()
            if row is None:
                raise JobNotFound(f"no analysis job {job_id!r}")
            job = self._row_to_job(row)
            if job.status in (JobStatus.DONE, JobStatus.FAILED):
                raise StoreError(
                    f"job {job_id!r} already finished "
                    f"({job.status.value})")
            con.execute(
                "UPDATE jobs SET status = 'Failed', finished_at = ?, "
                "error = ? WHERE job_id = ?", (now, error, job_id))
            self._append_audit(
                con, job.submitted_by, AuditAction.ANALYSE, job_id,
                f"analysis failed: {error}")
        return self.get_job(job_id)

    def reset_interrupted_jobs(self) -> int:
        """Mark jobs left Running by a dead process as Failed."""
        now = _utcnow()
        with self._write() as con:
            rows = con.execute(
                "SELECT job_id, submitted_by FROM jobs "
                "WHERE status = 'Running'").fetchall()
            for row in rows:
                con.execute(
                    "UPDATE jobs SET status = 'Failed', finished_at = ?, "
                    "error = 'interrupted by service restart' "
                    "WHERE job_id = ?", (now, row["job_id"]))
                self._append_audit(
                    con, "system", AuditAction.ANALYSE, row["job_id"],
                    "job interrupted by service restart")
        return len(rows)

    # --- integrity and interchange ---------------------------------------

    def verify_integrity(self) -> list[str]:
        """Full-store referential and audit-sequence scan."""
        con = self._conn()
        problems = []
        for query, message in (
            ("SELECT m.measurement_id FROM measurements m "
             "LEFT JOIN cases c ON c.case_id = m.case_id "
             "WHERE c.case_id IS NULL",
             "measurement {} has no case"),
            ("SELECT a.analysis_id FROM analyses a "
             "LEFT JOIN measurements m "
             "ON m.measurement_id = a.measurement_id "
             "WHERE m.measurement_id IS NULL",
             "analysis {} has no measurement"),
            ("SELECT j.job_id FROM jobs j "
             "LEFT JOIN measurements m "
             "ON m.measurement_id = j.measurement_id "
             "WHERE m.measurement_id IS NULL",
             "job {} has no measurement"),
        ):
            for row in con.execute(query).fetchall():
                problems.append(message.format(row[0]))
        for ref_col in ("sample_ref", "white_ref", "dark_ref",
                        "reflectance_ref"):
            for row in con.execute(
                    f"SELECT m.measurement_id FROM measurements m "
                    f"LEFT JOIN spectra s ON s.spectrum_id = m.{ref_col} "
                    f"WHERE s.spectrum_id IS NULL").fetchall():
                problems.append(
                    f"measurement {row[0]} lost its {ref_col}")
        row = con.execute(
            "SELECT COUNT(*) AS n, COALESCE(MIN(sequence_number), 1) AS lo,"
            " COALESCE(MAX(sequence_number), 0) AS hi FROM audit").fetchone()
        if row["n"] != row["hi"] - row["lo"] + 1 or (row["n"] and
                                                     row["lo"] != 1):
            problems.append(
                f"audit sequence has gaps: {row['n']} entries spanning "
                f"[{row['lo']}, {row['hi']}]")
        return problems

    def export_case(self, case_id: str, dest_dir: str | Path) -> Path:
        """Write one case as a directory tree of meta files and CSVs."""
        case = self.get_case(case_id)
        root = Path(dest_dir) / case.case_id
        root.mkdir(parents=True, exist_ok=True)
        meta = {
            "case_id": case.case_id, "external_ref": case.external_ref,
            "body_site": case.body_site,
            "postmortem_interval_hours": case.postmortem_interval_hours,
            "notes": case.notes, "state": case.state.value,
            "created_at": case.created_at, "updated_at": case.updated_at,
        }
        (root / "case.meta").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n")
        for m in self.list_measurements(case_id):
            mdir = root / f"measurement-{m.measurement_id}"
            mdir.mkdir(exist_ok=True)
            (mdir / "measurement.meta").write_text(json.dumps({
                "measurement_id": m.measurement_id,
                "instrument": m.instrument.to_dict(),
                "operator_id": m.operator_id,
                "recorded_at": m.recorded_at,
            }, sort_keys=True, indent=2) + "\n")
            for name, ref in (("sample", m.sample_ref),
                              ("white", m.white_ref),
                              ("dark", m.dark_ref),
                              ("reflectance", m.reflectance_ref)):
                (mdir / f"{name}.csv").write_text(
                    self.get_spectrum_text(ref))
            for a in self.list_analyses(m.measurement_id):
                (root / f"analysis-{a.analysis_id}.meta").write_text(
                    json.dumps({
                        "analysis_id": a.analysis_id,
                        "measurement_id": a.measurement_id,
                        "config": a.config, "result": a.result,
                        "engine_version": a.engine_version,
                        "created_at": a.created_at,
                        "created_by": a.created_by,
                    }, sort_keys=True, indent=2) + "\n")
        return root

    def import_case(self, actor: User | None,
                    case_dir: str | Path) -> Case:
        """Load a directory tree written by export_case, ids preserved."""
        actor = self._require(actor, Role.OPERATOR, "import cases")
        root = Path(case_dir)
        try:
            meta = json.loads((root / "case.meta").read_text())
            case_id = meta["case_id"]
            state = CaseState(meta["state"])
        except (OSError, KeyError, ValueError) as exc:
            raise ValidationFailed(f"unreadable case export: {exc}") from exc
        with self._write() as con:
            if con.execute("SELECT 1 FROM cases WHERE case_id = ?",
                           (case_id,)).fetchone():
                raise ValidationFailed(f"case {case_id!r} already exists")
            con.execute(
                "INSERT INTO cases VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (case_id, meta.get("external_ref", ""),
                 meta.get("body_site", ""),
                 meta.get("postmortem_interval_hours"),
                 meta.get("notes", ""), state.value,
                 meta["created_at"], meta["updated_at"]))
            for mdir in sorted(root.glob("measurement-*")):
                mmeta = json.loads((mdir / "measurement.meta").read_text())
                refs = {}
                for name in ("sample", "white", "dark", "reflectance"):
                    text = (mdir / f"{name}.csv").read_text()
                    refs[name] = _new_id("spec")
                    kind = ("reflectance" if name == "reflectance"
                            else "raw_counts")
                    self._insert_spectrum(con, refs[name], kind, text)
                con.execute(
                    "INSERT INTO measurements VALUES "
                    "(?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (mmeta["measurement_id"], case_id, refs["sample"],
                     refs["white"], refs["dark"], refs["reflectance"],
                     json.dumps(InstrumentMetadata.from_dict(
                         mmeta.get("instrument", {})).to_dict(),
                         sort_keys=True),
                     mmeta.get("operator_id", actor.user_id),
                     mmeta["recorded_at"]))
            for ameta_path in sorted(root.glob("analysis-*.meta")):
                ameta = json.loads(ameta_path.read_text())
                con.execute(
                    "INSERT INTO analyses VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (ameta["analysis_id"], ameta["measurement_id"],
                     json.dumps(ameta.get("config", {}), sort_keys=True),
                     json.dumps(ameta.get("result", {}), sort_keys=True),
                     ameta.get("engine_version", "unknown"),
                     ameta["created_at"],
                     ameta.get("created_by", actor.user_id)))
            self._append_audit(con, actor.user_id, AuditAction.CREATE,
                               case_id, f"case imported from {root.name}")
        return self.get_case(case_id)

    def dump(self) -> str:
        """Logical dump for whole-store comparisons in tests."""
        return "\n".join(self._conn().iterdump())
