"""HTTP front end for a protected model with per-session query budgets."""

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..defense import DefenseConfig, QueryLedger, protected_query
from ..errors import BudgetExhausted
from .schemas import Health, ModelInfo, PredictRequest, PredictResponse, SessionCreate, SessionInfo


def _session_info(sid, ledger):
    return SessionInfo(session_id=sid, budget=ledger.budget, used=ledger.used, remaining=ledger.remaining)


def create_app(base, defense=None, default_budget=19200):
    """Build the app around one base network and its defense.

    Every prediction is charged to a session's ledger; a request that would
    overrun the budget is refused whole with 429 and charges nothing.
    """
    defense = defense or DefenseConfig()
    app = FastAPI(title="stealbench", version=__version__)
    sessions = {}
    lock = threading.Lock()

    def ledger_for(sid):
        ledger = sessions.get(sid)
        if ledger is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return ledger

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__)

    @app.get("/model", response_model=ModelInfo)
    def model_info():
        return ModelInfo(input_shape=list(base.input_shape), num_classes=base.num_classes,
                         n_parameters=base.n_parameters(), defense=defense.model_dump(mode="json"),
                         default_budget=default_budget)

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(body: SessionCreate = SessionCreate()):
        sid = uuid.uuid4().hex
        ledger = QueryLedger(body.budget if body.budget is not None else default_budget)
        with lock:
            sessions[sid] = ledger
        return _session_info(sid, ledger)

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def get_session(sid: str):
        return _session_info(sid, ledger_for(sid))

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        ledger = ledger_for(req.session_id)
        try:
            batch = np.asarray(req.inputs, dtype=np.float64)
        except (TypeError, ValueError):
            raise HTTPException(status_code=422, detail="inputs must be a rectangular numeric array")
        if batch.shape[1:] != tuple(base.input_shape):
            raise HTTPException(status_code=422,
                                detail=f"each input must have shape {list(base.input_shape)}, got {list(batch.shape[1:])}")
        if not np.all(np.isfinite(batch)):
            raise HTTPException(status_code=422, detail="inputs must be finite")
        try:
            with lock:
                probs = protected_query(base, defense, batch, ledger, "api")
        except BudgetExhausted as exc:
            raise HTTPException(status_code=429, detail=str(exc))
        return PredictResponse(probabilities=probs.tolist(), labels=probs.argmax(axis=1).tolist(),
                               used=ledger.used, remaining=ledger.remaining)

    return app
