"""Service boundary: authenticated endpoints plus the analysis workers.

Handlers are stateless; every piece of shared state lives in the
transactional store, so any number of request threads and worker threads
can run against one database file. Workers claim jobs by compare-and-set
on the job status and finish them through the store's coupled
record-plus-status transaction, which is what makes processing
at-most-once across crashes.
"""

from __future__ import annotations

import json
import os
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, File, Form, Header, HTTPException, Request, \
    UploadFile
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .errors import (
    CaseClosed,
    CaseNotFound,
    ConfigInvalid,
    CsvFormatError,
    DegenerateReference,
    GridMismatch,
    GridOutOfRange,
    IllegalTransition,
    ImmutableRecord,
    InfeasibleStart,
    JobNotFound,
    LivorlabError,
    LutFormatError,
    MeasurementNotFound,
    MissingChromophore,
    NonFiniteResidual,
    OutOfGrid,
    StoreError,
    StoreLocked,
    Unauthorized,
    ValidationFailed,
)
from .extinction import load_extinction_db
from .inverse import (
    analysis_config_from_dict,
    fit,
    fit_result_to_dict,
)
from .mcrt import ForwardLUT, load_lut
from .spectral import resample
from .eln import (
    AnalysisJob,
    AnalysisRecord,
    AuditEntry,
    Case,
    CaseState,
    InstrumentMetadata,
    MeasurementRecord,
    Role,
    Store,
    StoreLock,
    User,
)

DEFAULT_ADDR = "127.0.0.1:8077"
DEFAULT_WORKERS = 2
_POLL_SECONDS = 0.05


@dataclass(frozen=True)
class ServiceConfig:
    addr: str = DEFAULT_ADDR
    store_path: str = "livorlab.db"
    lut_dir: str = "luts"
    workers: int = DEFAULT_WORKERS
    # built client assets to serve at /; None runs the API alone
    static_dir: str | None = None

    def __post_init__(self):
        if int(self.workers) < 0:
            raise ConfigInvalid("worker count must be >= 0")
        object.__setattr__(self, "workers", int(self.workers))
        host, _, port = self.addr.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigInvalid(f"bad listen address {self.addr!r}")

    @property
    def host(self) -> str:
        return self.addr.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.addr.rpartition(":")[2])


def load_service_config(path: str | Path | None = None,
                        env: dict | None = None) -> ServiceConfig:
    """Config file values, overridden by environment variables."""
    env = os.environ if env is None else env
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigInvalid(f"unreadable service config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("service config must be an object")
    try:
        return ServiceConfig(
            addr=str(env.get("LIVORLAB_ADDR",
                             data.get("addr", DEFAULT_ADDR))),
            store_path=str(env.get("LIVORLAB_STORE",
                                   data.get("store", "livorlab.db"))),
            lut_dir=str(env.get("LIVORLAB_LUTS",
                                data.get("luts", "luts"))),
            workers=int(env.get("LIVORLAB_WORKERS",
                                data.get("workers", DEFAULT_WORKERS))),
            static_dir=env.get("LIVORLAB_STATIC",
                               data.get("static")) or None,
        )
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad service config: {exc}") from exc


class LutRepository:
    """Named transport tables in one directory, loaded once."""

    def __init__(self, lut_dir: str | Path):
        self._dir = Path(lut_dir)
        self._cache: dict[str, ForwardLUT] = {}
        self._lock = threading.Lock()

    def names(self) -> list[str]:
        return sorted(p.stem for p in self._dir.glob("*.flut"))

    def get(self, name: str) -> ForwardLUT:
        with self._lock:
            if name not in self._cache:
                path = self._dir / f"{name}.flut"
                if not path.is_file():
                    raise LutFormatError(
                        f"lut '{name}' not found in {self._dir}")
                self._cache[name] = load_lut(path)
            return self._cache[name]


class AnalysisWorkerPool:
    """Threads that pull Queued jobs and run the fit."""

    def __init__(self, store: Store, luts: LutRepository, workers: int):
        self._store = store
        self._luts = luts
        self._db = load_extinction_db()
        self._stop = threading.Event()
        self._threads = [
            threading.Thread(target=self._loop, name=f"analysis-{i}",
                             daemon=True)
            for i in range(workers)]

    def start(self) -> None:
        for t in self._threads:
            t.start()

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            if t.is_alive():
                t.join(timeout=10.0)

    def _loop(self) -> None:
        while not self._stop.is_set():
            job = self._store.claim_next_job()
            if job is None:
                self._stop.wait(_POLL_SECONDS)
                continue
            self._run(job)

    def _run(self, job: AnalysisJob) -> None:
        try:
            cfg = analysis_config_from_dict(job.config)
            lut = self._luts.get(cfg.lut_name)
            measurement = self._store.get_measurement(job.measurement_id)
            measured = self._store.read_spectrum(
                measurement.reflectance_ref)
            band = resample(measured, cfg.grid())
            result = fit(band, cfg.fit, lut, self._db)
            self._store.complete_job(job.job_id, job.config,
                                     fit_result_to_dict(result))
        except LivorlabError as exc:
            self._store.fail_job(job.job_id, str(exc))
        except Exception as exc:  # noqa: BLE001 - job must not wedge
            self._store.fail_job(job.job_id, f"internal error: {exc!r}")


# --- wire formats --------------------------------------------------------

def case_to_dict(case: Case) -> dict:
    return {
        "case_id": case.case_id, "external_ref": case.external_ref,
        "body_site": case.body_site,
        "postmortem_interval_hours": case.postmortem_interval_hours,
        "notes": case.notes, "state": case.state.value,
        "created_at": case.created_at, "updated_at": case.updated_at,
    }


def measurement_to_dict(m: MeasurementRecord) -> dict:
    return {
        "measurement_id": m.measurement_id, "case_id": m.case_id,
        "sample_ref": m.sample_ref, "white_ref": m.white_ref,
        "dark_ref": m.dark_ref, "reflectance_ref": m.reflectance_ref,
        "instrument": m.instrument.to_dict(),
        "operator_id": m.operator_id, "recorded_at": m.recorded_at,
    }


def analysis_to_dict(a: AnalysisRecord) -> dict:
    return {
        "analysis_id": a.analysis_id,
        "measurement_id": a.measurement_id,
        "config": a.config, "result": a.result,
        "engine_version": a.engine_version,
        "created_at": a.created_at, "created_by": a.created_by,
    }


def job_to_dict(job: AnalysisJob) -> dict:
    return {
        "job_id": job.job_id, "measurement_id": job.measurement_id,
        "config": job.config, "status": job.status.value,
        "submitted_by": job.submitted_by,
        "submitted_at": job.submitted_at,
        "finished_at": job.finished_at, "result_ref": job.result_ref,
        "error": job.error,
    }


def audit_to_dict(entry: AuditEntry) -> dict:
    return {
        "sequence_number": entry.sequence_number, "actor": entry.actor,
        "action": entry.action.value, "target_id": entry.target_id,
        "at": entry.at, "detail": entry.detail,
    }


def spectrum_payload(spec) -> dict:
    return {
        "wavelengths_nm": [float(x) for x in spec.wavelengths_nm],
        "values": [float(x) for x in spec.values],
    }


class LoginBody(BaseModel):
    user_id: str
    password: str


class CaseBody(BaseModel):
    external_ref: str = ""
    body_site: str = ""
    postmortem_interval_hours: float | None = None
    notes: str = ""


class TransitionBody(BaseModel):
    target: str


class AnalysisBody(BaseModel):
    measurement_id: str
    config: dict


_STATUS_BY_ERROR = (
    (Unauthorized, 403),
    (CaseNotFound, 404), (MeasurementNotFound, 404), (JobNotFound, 404),
    (CaseClosed, 409), (IllegalTransition, 409), (ImmutableRecord, 409),
    (ValidationFailed, 422), (ConfigInvalid, 422), (CsvFormatError, 422),
    (GridMismatch, 422), (DegenerateReference, 422),
    (GridOutOfRange, 422), (MissingChromophore, 422),
    (InfeasibleStart, 422), (OutOfGrid, 422), (NonFiniteResidual, 422),
    (LutFormatError, 422),
    (StoreLocked, 503), (StoreError, 500),
    (LivorlabError, 400),
)


def create_app(config: ServiceConfig, *, start_workers: bool = True,
               hold_lock: bool = True) -> FastAPI:
    """Build the service around one store; lifespan owns the resources."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        lock = StoreLock(config.store_path)
        if hold_lock:
            lock.acquire(f"livorlab service pid {os.getpid()}")
        try:
            store = Store(config.store_path)
            store.reset_interrupted_jobs()
            app.state.store = store
            app.state.luts = LutRepository(config.lut_dir)
            pool = AnalysisWorkerPool(store, app.state.luts,
                                      config.workers if start_workers
                                      else 0)
            pool.start()
            app.state.pool = pool
            yield
            pool.stop()
            store.close()
        finally:
            if hold_lock:
                lock.release()

    app = FastAPI(title="livorlab", version=__version__, lifespan=lifespan)

    for err_cls, status in _STATUS_BY_ERROR:
        def handler(request: Request, exc: Exception,
                    _status=status) -> JSONResponse:
            return JSONResponse(
                status_code=_status,
                content={"error": type(exc).__name__, "detail": str(exc)})
        app.add_exception_handler(err_cls, handler)

    def actor_for(request: Request,
                  authorization: str | None) -> User:
        """Resolve the session or record the denial and stop."""
        store: Store = request.app.state.store
        token = ""
        if authorization and authorization.lower().startswith("bearer "):
            token = authorization[7:].strip()
        user = store.resolve_session(token) if token else None
        if user is None:
            store.record_denied(
                "anonymous", f"unauthenticated request to "
                f"{request.url.path}")
            raise HTTPException(status_code=401,
                                detail="authentication required")
        return user

    @app.post("/api/login")
    def login(body: LoginBody, request: Request):
        store: Store = request.app.state.store
        try:
            token, expires_at, user = store.login(body.user_id,
                                                  body.password)
        except Unauthorized as exc:
            raise HTTPException(status_code=401, detail=str(exc)) from exc
        return {"token": token, "user_id": user.user_id,
                "role": user.role.value, "expires_at": expires_at}

    @app.post("/api/cases", status_code=201)
    def create_case(body: CaseBody, request: Request,
                    authorization: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        case = request.app.state.store.create_case(
            user, external_ref=body.external_ref,
            body_site=body.body_site,
            postmortem_interval_hours=body.postmortem_interval_hours,
            notes=body.notes)
        return case_to_dict(case)

    @app.get("/api/cases")
    def list_cases(request: Request, state: str | None = None,
                   body_site: str | None = None, text: str | None = None,
                   page: int = 1, page_size: int = 50,
                   authorization: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        state_filter = None
        if state:
            try:
                state_filter = CaseState(state)
            except ValueError as exc:
                raise ValidationFailed(
                    f"unknown case state {state!r}") from exc
        cases = request.app.state.store.query_cases(
            user, state=state_filter, body_site=body_site, text=text,
            page=page, page_size=page_size)
        return {"cases": [case_to_dict(c) for c in cases], "page": page}

    @app.get("/api/cases/{case_id}")
    def get_case(case_id: str, request: Request,
                 authorization: str | None = Header(default=None)):
        actor_for(request, authorization)
        return case_to_dict(request.app.state.store.get_case(case_id))

    @app.post("/api/cases/{case_id}/transition")
    def transition(case_id: str, body: TransitionBody, request: Request,
                   authorization: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        try:
            target = CaseState(body.target)
        except ValueError as exc:
            raise ValidationFailed(
                f"unknown case state {body.target!r}") from exc
        case = request.app.state.store.transition_case(user, case_id,
                                                       target)
        return case_to_dict(case)

    @app.post("/api/cases/{case_id}/measurements", status_code=201)
    async def attach_measurement(
            case_id: str, request: Request,
            sample: UploadFile = File(...),
            white: UploadFile = File(...),
            dark: UploadFile = File(...),
            instrument: str | None = Form(default=None),
            authorization: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        texts = {}
        for name, upload in (("sample", sample), ("white", white),
                             ("dark", dark)):
            raw = await upload.read()
            try:
                texts[name] = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ValidationFailed(
                    f"{name} upload is not UTF-8 text") from exc
        meta = InstrumentMetadata()
        if instrument:
            try:
                meta = InstrumentMetadata.from_dict(json.loads(instrument))
            except ValueError as exc:
                raise ValidationFailed(
                    f"bad instrument metadata: {exc}") from exc
        record = request.app.state.store.attach_measurement(
            user, case_id, texts["sample"], texts["white"], texts["dark"],
            meta)
        return measurement_to_dict(record)

    @app.post("/api/analyses", status_code=202)
    def submit_analysis(
            body: AnalysisBody, request: Request,
            authorization: str | None = Header(default=None),
            idempotency_key: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        store: Store = request.app.state.store
        store.check_role(user, Role.ANALYST, "submit analyses",
                         body.measurement_id)
        analysis_config_from_dict(body.config)  # reject junk up front
        job = store.submit_job(user, body.measurement_id, body.config,
                               idempotency_key=idempotency_key)
        return job_to_dict(job)

    @app.get("/api/analyses/jobs/{job_id}")
    def poll_job(job_id: str, request: Request,
                 authorization: str | None = Header(default=None)):
        actor_for(request, authorization)
        return job_to_dict(request.app.state.store.get_job(job_id))

    @app.get("/api/cases/{case_id}/results")
    def browse_results(case_id: str, request: Request,
                       authorization: str | None = Header(default=None)):
        actor_for(request, authorization)
        store: Store = request.app.state.store
        case = store.get_case(case_id)
        measurements = []
        for m in store.list_measurements(case_id):
            reflectance = store.read_spectrum(m.reflectance_ref)
            analyses = store.list_analyses(m.measurement_id)[::-1]
            views = []
            for a in analyses:
                view = analysis_to_dict(a)
                predicted = a.result.get("predicted")
                if predicted and predicted.get("wavelengths_nm"):
                    try:
                        view["measured"] = spectrum_payload(resample(
                            reflectance, predicted["wavelengths_nm"]))
                    except GridOutOfRange:
                        view["measured"] = None
                views.append(view)
            measurements.append({
                "measurement": measurement_to_dict(m),
                "reflectance": spectrum_payload(reflectance),
                "analyses": views,
            })
        return {"case": case_to_dict(case), "measurements": measurements}

    @app.get("/api/audit")
    def audit(request: Request, target: str | None = None, page: int = 1,
              page_size: int = 200,
              authorization: str | None = Header(default=None)):
        user = actor_for(request, authorization)
        entries = request.app.state.store.audit_trail(
            user, target_id=target, page=page, page_size=page_size)
        return {"entries": [audit_to_dict(e) for e in entries]}

    if config.static_dir and Path(config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        # mounted last so /api/* keeps routing to the handlers above
        app.mount("/", StaticFiles(directory=config.static_dir,
                                   html=True), name="ui")

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="info")
