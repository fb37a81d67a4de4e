"""Notebook store: lifecycle, roles, audit, immutability, jobs."""

import itertools
import sqlite3

import pytest

from livorlab.eln import (
    AnalysisJob,
    AuditAction,
    Case,
    CaseState,
    DuplicateExternalRefWarning,
    InstrumentMetadata,
    JobStatus,
    Role,
    Store,
    StoreLock,
    hash_credential,
    transition_allowed,
    verify_credential,
)
from livorlab.errors import (
    CaseClosed,
    CaseNotFound,
    CsvFormatError,
    GridMismatch,
    IllegalTransition,
    ImmutableRecord,
    JobNotFound,
    MeasurementNotFound,
    StoreError,
    StoreLocked,
    Unauthorized,
    ValidationFailed,
)

SAMPLE = "wavelength_nm,value\n500.0,120.5\n510.0,130.25\n520.0,98.125\n"
WHITE = "wavelength_nm,value\n500.0,200.0\n510.0,210.0\n520.0,205.5\n"
DARK = "wavelength_nm,value\n500.0,10.0\n510.0,11.0\n520.0,9.5\n"


def build_cast(store):
    admin = store.bootstrap_admin("root", "Root", "pw-root")
    return {
        "admin": admin,
        "operator": store.add_user(admin, "op", "Op", Role.OPERATOR, "pw-op"),
        "analyst": store.add_user(admin, "an", "An", Role.ANALYST, "pw-an"),
        "reviewer": store.add_user(admin, "rv", "Rv", Role.REVIEWER,
                                   "pw-rv"),
    }


@pytest.fixture()
def fresh(tmp_path):
    store = Store(tmp_path / "eln.db")
    return store, build_cast(store)


@pytest.fixture(scope="module")
def shared(tmp_path_factory):
    store = Store(tmp_path_factory.mktemp("eln") / "eln.db")
    return store, build_cast(store)


def make_measurement(store, actor, case_id=None):
    if case_id is None:
        case_id = store.create_case(actor, body_site="back").case_id
    return store.attach_measurement(actor, case_id, SAMPLE, WHITE, DARK)


def audit_count(store):
    return store._conn().execute("SELECT COUNT(*) FROM audit").fetchone()[0]


class TestCredentials:
    def test_round_trip(self):
        stored = hash_credential("hunter2")
        assert verify_credential("hunter2", stored)
        assert not verify_credential("hunter3", stored)

    def test_distinct_salts(self):
        assert hash_credential("same") != hash_credential("same")

    def test_garbage_hash_rejected(self):
        assert not verify_credential("x", "not-a-hash")
        assert not verify_credential("x", "md5$1$1$1$00$00")


class TestUsersAndSessions:
    def test_bootstrap_only_once(self, fresh):
        store, cast = fresh
        with pytest.raises(Unauthorized):
            store.bootstrap_admin("root2", "Again", "pw")

    def test_add_user_requires_admin(self, shared):
        store, cast = shared
        for who in ("operator", "analyst", "reviewer"):
            with pytest.raises(Unauthorized):
                store.add_user(cast[who], "x", "X", Role.OPERATOR, "pw")

    def test_duplicate_user_rejected(self, shared):
        store, cast = shared
        with pytest.raises(ValidationFailed):
            store.add_user(cast["admin"], "op", "Copy", Role.OPERATOR, "pw")

    def test_login_and_resolve(self, shared):
        store, cast = shared
        token, expires, user = store.login("op", "pw-op")
        assert user.role is Role.OPERATOR
        resolved = store.resolve_session(token)
        assert resolved is not None and resolved.user_id == "op"

    def test_login_bad_password_denied_and_audited(self, shared):
        store, cast = shared
        before = audit_count(store)
        with pytest.raises(Unauthorized):
            store.login("op", "wrong")
        entries = store.audit_trail(cast["reviewer"],
                                    page=1, page_size=10_000)
        assert entries[before].action is AuditAction.DENIED
        assert entries[before].actor == "op"

    def test_expired_session_is_gone(self, shared):
        store, cast = shared
        token, _, _ = store.login("op", "pw-op", ttl_seconds=-1)
        assert store.resolve_session(token) is None

    def test_unknown_token(self, shared):
        store, _ = shared
        assert store.resolve_session("bogus") is None


class TestCaseLifecycle:
    def test_create_opens_case(self, shared):
        store, cast = shared
        case = store.create_case(cast["operator"], external_ref="K-77",
                                 body_site="back",
                                 postmortem_interval_hours=16.5,
                                 notes="left scapula")
        assert case.state is CaseState.OPEN
        assert case.created_at == case.updated_at
        fetched = store.get_case(case.case_id)
        assert fetched == case

    def test_negative_interval_rejected(self, shared):
        store, cast = shared
        with pytest.raises(ValidationFailed):
            store.create_case(cast["operator"],
                              postmortem_interval_hours=-1.0)

    def test_missing_case(self, shared):
        store, _ = shared
        with pytest.raises(CaseNotFound):
            store.get_case("case-nope")

    def test_duplicate_external_ref_warns_not_fails(self, fresh):
        store, cast = fresh
        store.create_case(cast["operator"], external_ref="dup-1")
        with pytest.warns(DuplicateExternalRefWarning):
            second = store.create_case(cast["operator"],
                                       external_ref="dup-1")
        assert store.get_case(second.case_id).external_ref == "dup-1"

    def test_transition_matrix(self, fresh):
        """All 25 ordered state pairs behave per the lifecycle graph."""
        store, cast = fresh
        states = list(CaseState)
        forward = {(CaseState.OPEN, CaseState.MEASURED),
                   (CaseState.MEASURED, CaseState.ANALYSED),
                   (CaseState.ANALYSED, CaseState.REVIEWED),
                   (CaseState.REVIEWED, CaseState.CLOSED)}
        for src, dst in itertools.product(states, states):
            legal = (src, dst) in forward or (
                dst is CaseState.CLOSED and src is not CaseState.CLOSED)
            assert transition_allowed(src, dst) == legal
            case = store.create_case(cast["operator"])
            store._conn().execute(
                "UPDATE cases SET state = ? WHERE case_id = ?",
                (src.value, case.case_id))
            if legal:
                moved = store.transition_case(cast["reviewer"],
                                              case.case_id, dst)
                assert moved.state is dst
            else:
                with pytest.raises(IllegalTransition):
                    store.transition_case(cast["reviewer"], case.case_id,
                                          dst)
                assert store.get_case(case.case_id).state is src

    def test_review_and_close_need_reviewer(self, fresh):
        store, cast = fresh
        case = store.create_case(cast["operator"])
        for target in (CaseState.REVIEWED, CaseState.CLOSED):
            for who in ("operator", "analyst"):
                with pytest.raises(Unauthorized):
                    store.transition_case(cast[who], case.case_id, target)
        store.transition_case(cast["reviewer"], case.case_id,
                              CaseState.CLOSED)

    def test_operator_may_step_forward(self, fresh):
        store, cast = fresh
        case = store.create_case(cast["operator"])
        moved = store.transition_case(cast["operator"], case.case_id,
                                      CaseState.MEASURED)
        assert moved.state is CaseState.MEASURED
        assert moved.updated_at >= moved.created_at

    def test_transition_checks_auth_before_existence(self, fresh):
        store, cast = fresh
        with pytest.raises(Unauthorized):
            store.transition_case(None, "case-nope", CaseState.CLOSED)
        with pytest.raises(CaseNotFound):
            store.transition_case(cast["reviewer"], "case-nope",
                                  CaseState.CLOSED)


class TestQueryCases:
    @pytest.fixture()
    def populated(self, fresh):
        store, cast = fresh
        cases = []
        for i in range(5):
            cases.append(store.create_case(
                cast["operator"], external_ref=f"Q-{i}",
                body_site="back" if i % 2 == 0 else "thigh",
                notes=f"note {i}"))
        return store, cast, cases

    def test_pages_cover_everything_once(self, populated):
        store, cast, cases = populated
        seen = []
        for page in (1, 2, 3):
            seen += store.query_cases(cast["operator"], page=page,
                                      page_size=2)
        assert [c.case_id for c in seen[:2]], "first page non-empty"
        assert len(seen) == 5
        assert len({c.case_id for c in seen}) == 5
        # newest first
        assert [c.created_at for c in seen] == sorted(
            (c.created_at for c in cases), reverse=True)

    def test_filter_by_state_and_site(self, populated):
        store, cast, cases = populated
        store.transition_case(cast["operator"], cases[0].case_id,
                              CaseState.MEASURED)
        hits = store.query_cases(cast["operator"],
                                 state=CaseState.MEASURED)
        assert [c.case_id for c in hits] == [cases[0].case_id]
        backs = store.query_cases(cast["operator"], body_site="back")
        assert {c.case_id for c in backs} == {cases[i].case_id
                                              for i in (0, 2, 4)}

    def test_text_search(self, populated):
        store, cast, cases = populated
        hits = store.query_cases(cast["operator"], text="Q-3")
        assert [c.case_id for c in hits] == [cases[3].case_id]

    def test_requires_authentication(self, populated):
        store, cast, _ = populated
        with pytest.raises(Unauthorized):
            store.query_cases(None)


class TestMeasurements:
    def test_attach_stores_raw_text_verbatim(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        assert store.get_spectrum_text(m.sample_ref) == SAMPLE
        assert store.get_spectrum_text(m.white_ref) == WHITE
        assert store.get_spectrum_text(m.dark_ref) == DARK

    def test_derived_reflectance_matches_normalization(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        spec = store.read_spectrum(m.reflectance_ref)
        assert spec.values[0] == pytest.approx((120.5 - 10.0)
                                               / (200.0 - 10.0))
        assert len(spec.values) == 3

    def test_attach_advances_open_case(self, shared):
        store, cast = shared
        case = store.create_case(cast["operator"])
        make_measurement(store, cast["operator"], case.case_id)
        assert store.get_case(case.case_id).state is CaseState.MEASURED
        # second attach leaves Measured alone
        make_measurement(store, cast["operator"], case.case_id)
        assert store.get_case(case.case_id).state is CaseState.MEASURED
        assert len(store.list_measurements(case.case_id)) == 2

    def test_attach_to_closed_case_refused(self, shared):
        store, cast = shared
        case = store.create_case(cast["operator"])
        store.transition_case(cast["reviewer"], case.case_id,
                              CaseState.CLOSED)
        with pytest.raises(CaseClosed):
            make_measurement(store, cast["operator"], case.case_id)

    def test_attach_unknown_case(self, shared):
        store, cast = shared
        with pytest.raises(CaseNotFound):
            store.attach_measurement(cast["operator"], "case-nope",
                                     SAMPLE, WHITE, DARK)

    def test_malformed_csv_rejected(self, shared):
        store, cast = shared
        case = store.create_case(cast["operator"])
        with pytest.raises(CsvFormatError):
            store.attach_measurement(cast["operator"], case.case_id,
                                     "wavelength_nm,value\n500.0\n",
                                     WHITE, DARK)

    def test_grid_mismatch_rejected(self, shared):
        store, cast = shared
        case = store.create_case(cast["operator"])
        other = "wavelength_nm,value\n501.0,200.0\n510.0,210.0\n520.0,205.0\n"
        with pytest.raises(GridMismatch):
            store.attach_measurement(cast["operator"], case.case_id,
                                     SAMPLE, other, DARK)

    def test_degenerate_reference_rejected(self, shared):
        store, cast = shared
        from livorlab.errors import DegenerateReference
        case = store.create_case(cast["operator"])
        with pytest.raises(DegenerateReference):
            store.attach_measurement(cast["operator"], case.case_id,
                                     SAMPLE, DARK, DARK)

    def test_failed_attach_leaves_no_trace(self, fresh, monkeypatch):
        """A crash mid-ingest must roll the whole transaction back."""
        store, cast = fresh
        case = store.create_case(cast["operator"])
        before = store.dump()
        real = Store._insert_spectrum
        calls = {"n": 0}

        def wounded(self, con, spectrum_id, kind, csv_text):
            calls["n"] += 1
            if calls["n"] == 4:
                raise RuntimeError("disk full")
            real(self, con, spectrum_id, kind, csv_text)

        monkeypatch.setattr(Store, "_insert_spectrum", wounded)
        with pytest.raises(RuntimeError):
            make_measurement(store, cast["operator"], case.case_id)
        monkeypatch.undo()
        assert store.dump() == before
        assert store.get_case(case.case_id).state is CaseState.OPEN
        assert store.verify_integrity() == []

    def test_operator_role_required(self, shared):
        store, cast = shared
        with pytest.raises(Unauthorized):
            store.attach_measurement(None, "case-x", SAMPLE, WHITE, DARK)

    def test_missing_measurement(self, shared):
        store, _ = shared
        with pytest.raises(MeasurementNotFound):
            store.get_measurement("meas-nope")

    def test_instrument_defaults_persist(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        fetched = store.get_measurement(m.measurement_id)
        assert fetched.instrument == InstrumentMetadata()
        assert fetched.instrument.spot_diameter_mm == 5.0

    def test_instrument_validation(self):
        with pytest.raises(ValidationFailed):
            InstrumentMetadata(spot_diameter_mm=0.0)
        with pytest.raises(ValidationFailed):
            InstrumentMetadata.from_dict({"spot_diameter_mm": "wide"})


class TestAnalyses:
    def test_record_and_fetch(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        rec = store.record_analysis(cast["analyst"], m.measurement_id,
                                    {"band": [500, 600]}, {"chi2": 1.25})
        fetched = store.get_analysis(rec.analysis_id)
        assert fetched == rec
        assert fetched.engine_version
        assert fetched.created_by == "an"

    def test_advances_measured_case(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        store.record_analysis(cast["analyst"], m.measurement_id, {}, {})
        assert store.get_case(m.case_id).state is CaseState.ANALYSED

    def test_two_analyses_coexist_in_order(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        first = store.record_analysis(cast["analyst"], m.measurement_id,
                                      {}, {"run": 1})
        second = store.record_analysis(cast["analyst"], m.measurement_id,
                                       {}, {"run": 2})
        listed = store.list_analyses(m.measurement_id)
        assert [a.analysis_id for a in listed] == [first.analysis_id,
                                                   second.analysis_id]
        assert listed[0].created_at <= listed[1].created_at

    def test_analyst_role_required(self, shared):
        store, cast = shared
        m = make_measurement(store, cast["operator"])
        with pytest.raises(Unauthorized):
            store.record_analysis(cast["operator"], m.measurement_id, {},
                                  {})

    def test_unknown_measurement(self, shared):
        store, cast = shared
        with pytest.raises(MeasurementNotFound):
            store.record_analysis(cast["analyst"], "meas-nope", {}, {})

    def test_amend_always_refused(self, shared):
        store, cast = shared
        with pytest.raises(ImmutableRecord):
            store.amend_analysis("ana-anything", result={})


class TestImmutability:
    @pytest.fixture()
    def loaded(self, fresh):
        store, cast = fresh
        m = make_measurement(store, cast["operator"])
        store.record_analysis(cast["analyst"], m.measurement_id, {},
                              {"chi2": 1.0})
        return store, cast, m

    @pytest.mark.parametrize("statement", [
        "UPDATE measurements SET operator_id = 'evil'",
        "DELETE FROM measurements",
        "UPDATE analyses SET result_json = '{}'",
        "DELETE FROM analyses",
        "UPDATE audit SET actor = 'evil'",
        "DELETE FROM audit",
        "UPDATE spectra SET csv = ''",
        "DELETE FROM spectra",
    ])
    def test_raw_sql_cannot_rewrite_history(self, loaded, statement):
        store, _, _ = loaded
        before = store.dump()
        with pytest.raises(sqlite3.DatabaseError, match="immutable"):
            store._conn().execute(statement)
        assert store.dump() == before

    def test_stored_spectrum_text_stable_after_reopen(self, loaded,
                                                      tmp_path):
        store, cast, m = loaded
        text = store.get_spectrum_text(m.sample_ref)
        store.close()
        reopened = Store(store.path)
        assert reopened.get_spectrum_text(m.sample_ref) == text
        assert reopened.get_spectrum_text(m.sample_ref) == SAMPLE


class TestAudit:
    def test_every_mutation_appends_exactly_one_entry(self, fresh):
        store, cast = fresh
        n0 = audit_count(store)
        case = store.create_case(cast["operator"])
        assert audit_count(store) == n0 + 1
        m = store.attach_measurement(cast["operator"], case.case_id,
                                     SAMPLE, WHITE, DARK)
        assert audit_count(store) == n0 + 2  # auto-transition included
        store.record_analysis(cast["analyst"], m.measurement_id, {}, {})
        assert audit_count(store) == n0 + 3
        store.transition_case(cast["reviewer"], case.case_id,
                              CaseState.REVIEWED)
        assert audit_count(store) == n0 + 4

    def test_sequence_gap_free_after_many_operations(self, fresh):
        store, cast = fresh
        for i in range(40):
            case = store.create_case(cast["operator"], notes=f"c{i}")
            if i % 3 == 0:
                store.attach_measurement(cast["operator"], case.case_id,
                                         SAMPLE, WHITE, DARK)
            if i % 7 == 0:
                with pytest.raises(Unauthorized):
                    store.transition_case(cast["operator"], case.case_id,
                                          CaseState.CLOSED)
        entries = store.audit_trail(cast["reviewer"], page_size=10_000)
        seqs = [e.sequence_number for e in entries]
        assert seqs == list(range(1, len(seqs) + 1))
        assert store.verify_integrity() == []

    def test_denied_attempts_are_recorded(self, fresh):
        store, cast = fresh
        case = store.create_case(cast["operator"])
        with pytest.raises(Unauthorized):
            store.transition_case(cast["analyst"], case.case_id,
                                  CaseState.REVIEWED)
        entries = store.audit_trail(cast["reviewer"], page_size=10_000)
        assert entries[-1].action is AuditAction.DENIED
        assert entries[-1].actor == "an"
        assert entries[-1].target_id == case.case_id

    def test_trail_requires_reviewer(self, fresh):
        store, cast = fresh
        for who in ("operator", "analyst"):
            with pytest.raises(Unauthorized):
                store.audit_trail(cast[who])
        assert store.audit_trail(cast["admin"]) != []

    def test_target_filter(self, fresh):
        store, cast = fresh
        case = store.create_case(cast["operator"])
        store.transition_case(cast["reviewer"], case.case_id,
                              CaseState.CLOSED)
        entries = store.audit_trail(cast["reviewer"],
                                    target_id=case.case_id)
        assert len(entries) == 2
        assert {e.action for e in entries} == {AuditAction.CREATE,
                                               AuditAction.TRANSITION}


class TestJobs:
    @pytest.fixture()
    def queue(self, fresh):
        store, cast = fresh
        m = make_measurement(store, cast["operator"])
        return store, cast, m

    def test_submit_and_claim(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id,
                               {"grid": [500, 600, 2]})
        assert job.status is JobStatus.QUEUED
        claimed = store.claim_next_job()
        assert claimed.job_id == job.job_id
        assert claimed.status is JobStatus.RUNNING
        assert store.claim_next_job() is None

    def test_idempotency_key_replays_original(self, queue):
        store, cast, m = queue
        first = store.submit_job(cast["analyst"], m.measurement_id, {},
                                 idempotency_key="twice")
        n = audit_count(store)
        again = store.submit_job(cast["analyst"], m.measurement_id, {},
                                 idempotency_key="twice")
        assert again.job_id == first.job_id
        assert audit_count(store) == n, "replay writes no audit entry"

    def test_replay_reports_current_status(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id, {},
                               idempotency_key="later")
        store.claim_next_job()
        store.complete_job(job.job_id, {}, {"ok": True})
        again = store.submit_job(cast["analyst"], m.measurement_id, {},
                                 idempotency_key="later")
        assert again.status is JobStatus.DONE
        assert again.result_ref

    def test_one_running_job_per_measurement(self, queue):
        store, cast, m = queue
        job1 = store.submit_job(cast["analyst"], m.measurement_id, {})
        store.submit_job(cast["analyst"], m.measurement_id, {})
        other = make_measurement(store, cast["operator"])
        job3 = store.submit_job(cast["analyst"], other.measurement_id, {})
        assert store.claim_next_job().job_id == job1.job_id
        # same measurement blocked while job1 runs; other one proceeds
        assert store.claim_next_job().job_id == job3.job_id
        assert store.claim_next_job() is None

    def test_complete_couples_record_and_status(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id,
                               {"band": 1})
        store.claim_next_job()
        record = store.complete_job(job.job_id, {"band": 1},
                                    {"chi2": 0.5})
        done = store.get_job(job.job_id)
        assert done.status is JobStatus.DONE
        assert done.result_ref == record.analysis_id
        assert done.finished_at is not None
        assert store.get_analysis(record.analysis_id).created_by == "an"
        assert store.get_case(m.case_id).state is CaseState.ANALYSED

    def test_complete_requires_running(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id, {})
        with pytest.raises(StoreError):
            store.complete_job(job.job_id, {}, {})

    def test_fail_records_error(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id, {})
        store.claim_next_job()
        failed = store.fail_job(job.job_id, "lut 'missing' not found")
        assert failed.status is JobStatus.FAILED
        assert "missing" in failed.error

    def test_terminal_states_are_stable(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id, {})
        store.claim_next_job()
        store.complete_job(job.job_id, {}, {})
        with pytest.raises(StoreError):
            store.fail_job(job.job_id, "too late")
        assert store.get_job(job.job_id).status is JobStatus.DONE

    def test_restart_fails_interrupted_jobs(self, queue):
        store, cast, m = queue
        job = store.submit_job(cast["analyst"], m.measurement_id, {})
        queued = store.submit_job(cast["analyst"], m.measurement_id, {})
        store.claim_next_job()
        assert store.reset_interrupted_jobs() == 1
        assert store.get_job(job.job_id).status is JobStatus.FAILED
        assert "restart" in store.get_job(job.job_id).error
        assert store.get_job(queued.job_id).status is JobStatus.QUEUED

    def test_submit_requires_analyst(self, queue):
        store, cast, m = queue
        with pytest.raises(Unauthorized):
            store.submit_job(cast["operator"], m.measurement_id, {})

    def test_unknown_job(self, queue):
        store, _, _ = queue
        with pytest.raises(JobNotFound):
            store.get_job("job-nope")

    def test_done_invariant_enforced_in_type(self):
        with pytest.raises(ValueError):
            AnalysisJob("j", "m", {}, JobStatus.DONE, "an", "t")
        with pytest.raises(ValueError):
            AnalysisJob("j", "m", {}, JobStatus.FAILED, "an", "t")


class TestExportImport:
    def test_round_trip_preserves_bytes_and_ids(self, fresh, tmp_path):
        store, cast = fresh
        case = store.create_case(cast["operator"], external_ref="X-9",
                                 body_site="flank", notes="export me")
        m1 = make_measurement(store, cast["operator"], case.case_id)
        m2 = make_measurement(store, cast["operator"], case.case_id)
        store.record_analysis(cast["analyst"], m1.measurement_id,
                              {"a": 1}, {"chi2": 0.25})
        store.record_analysis(cast["analyst"], m2.measurement_id,
                              {"a": 2}, {"chi2": 0.5})
        first = store.export_case(case.case_id, tmp_path / "out1")

        target = Store(tmp_path / "other.db")
        other_cast = build_cast(target)
        imported = target.import_case(other_cast["operator"], first)
        assert imported.case_id == case.case_id
        assert imported.created_at == case.created_at
        assert imported.state == store.get_case(case.case_id).state
        assert len(target.list_measurements(case.case_id)) == 2
        assert (target.get_spectrum_text(
            target.list_measurements(case.case_id)[0].sample_ref)
            == SAMPLE)

        second = target.export_case(case.case_id, tmp_path / "out2")
        files1 = sorted(p.relative_to(first) for p in first.rglob("*")
                        if p.is_file())
        files2 = sorted(p.relative_to(second) for p in second.rglob("*")
                        if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (first / rel).read_bytes() == (second / rel).read_bytes()

    def test_import_refuses_collision(self, fresh, tmp_path):
        store, cast = fresh
        case = store.create_case(cast["operator"])
        exported = store.export_case(case.case_id, tmp_path / "exp")
        with pytest.raises(ValidationFailed):
            store.import_case(cast["operator"], exported)

    def test_import_garbage_dir(self, fresh, tmp_path):
        store, cast = fresh
        with pytest.raises(ValidationFailed):
            store.import_case(cast["operator"], tmp_path / "missing")


class TestIntegrityScan:
    def test_detects_seeded_corruption(self, fresh):
        store, cast = fresh
        m = make_measurement(store, cast["operator"])
        con = store._conn()
        con.execute("PRAGMA foreign_keys=OFF")
        con.execute("DELETE FROM cases WHERE case_id = ?", (m.case_id,))
        con.execute("DROP TRIGGER audit_no_delete")
        con.execute("DELETE FROM audit WHERE sequence_number = 3")
        problems = store.verify_integrity()
        assert any("has no case" in p for p in problems)
        assert any("gaps" in p for p in problems)

    def test_clean_store_has_no_problems(self, fresh):
        store, cast = fresh
        make_measurement(store, cast["operator"])
        assert store.verify_integrity() == []


class TestStoreLock:
    def test_second_acquire_refused(self, tmp_path):
        path = tmp_path / "eln.db"
        Store(path)
        with StoreLock(path):
            with pytest.raises(StoreLocked):
                StoreLock(path).acquire()

    def test_release_allows_reacquire(self, tmp_path):
        path = tmp_path / "eln.db"
        lock = StoreLock(path)
        lock.acquire("first")
        lock.release()
        with StoreLock(path):
            pass

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "eln.db"
        Store(path)
        con = sqlite3.connect(path)
        con.execute("UPDATE meta SET value = '99' "
                    "WHERE key = 'schema_version'")
        con.commit()
        con.close()
        with pytest.raises(StoreError):
            Store(path)
