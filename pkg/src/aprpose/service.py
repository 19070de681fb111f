"""Initial-pose service: newline-delimited JSON over TCP.

One JSON object per line in each direction. ``{"ping": true}`` is answered
with ``{"pong": true}``; every other line is an InitPoseRequest. Connections
are served concurrently against one read-only model.
"""
from __future__ import annotations

import base64
import binascii
import json
import logging
import socketserver
import threading
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import AprError
from .inference import PoseEstimator

log = logging.getLogger(__name__)

DEFAULT_PORT = 7431
DEFAULT_COVARIANCE = (0.25, 0.25, 0.25, 0.01, 0.01, 0.01)


class InitPoseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    modality: Literal["image", "bev", "points"]
    path: str | None = None
    data: str | None = None

    @model_validator(mode="after")
    def _one_payload(self):
        if (self.path is None) == (self.data is None):
            raise ValueError("exactly one of 'path' or 'data' must be given")
        return self


class InitPoseResponse(BaseModel):
    id: str
    status: Literal["ok", "error"]
    message: str = ""
    position: list[float] | None = None
    quaternion: list[float] | None = None
    covariance: list[list[float]] | None = None
    inference_ms: float | None = None


def diagonal(values) -> list[list[float]]:
    return [[float(values[i]) if i == j else 0.0 for j in range(6)] for i in range(6)]


def handle_request(req: InitPoseRequest, estimator: PoseEstimator,
                   covariance=DEFAULT_COVARIANCE) -> InitPoseResponse:
    try:
        if req.path is not None:
            try:
                pose, ms = estimator.estimate_file(req.path, req.modality)
            except OSError as e:
                return InitPoseResponse(id=req.id, status="error",
                                        message=f"cannot read payload {req.path}: {e.strerror or e}")
        else:
            try:
                raw = base64.b64decode(req.data, validate=True)
            except (binascii.Error, ValueError) as e:
                return InitPoseResponse(id=req.id, status="error", message=f"invalid base64 payload: {e}")
            pose, ms = estimator.estimate_bytes(req.modality, raw)
    except AprError as e:
        return InitPoseResponse(id=req.id, status="error", message=str(e))
    return InitPoseResponse(id=req.id, status="ok", position=pose.position.tolist(),
                            quaternion=pose.orientation.tolist(), covariance=diagonal(covariance),
                            inference_ms=ms)


def handle_line(line: str, estimator: PoseEstimator, covariance=DEFAULT_COVARIANCE) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        return InitPoseResponse(id="", status="error", message=f"malformed JSON: {e}").model_dump()
    if obj == {"ping": True}:
        return {"pong": True}
    try:
        req = InitPoseRequest.model_validate(obj)
    except ValidationError as e:
        rid = obj.get("id") if isinstance(obj, dict) and isinstance(obj.get("id"), str) else ""
        detail = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'request'}: {err['msg']}" for err in e.errors())
        return InitPoseResponse(id=rid, status="error", message=f"invalid request: {detail}").model_dump()
    return handle_request(req, estimator, covariance).model_dump()


class _Handler(socketserver.StreamRequestHandler):
    server: "InitPoseServer"

    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            resp = handle_line(line, self.server.estimator, self.server.covariance)
            self.wfile.write((json.dumps(resp) + "\n").encode("utf-8"))
            self.wfile.flush()


class InitPoseServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, estimator: PoseEstimator, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 covariance=DEFAULT_COVARIANCE):
        self.estimator = estimator
        self.covariance = tuple(float(c) for c in covariance)
        if len(self.covariance) != 6:
            raise ValueError(f"covariance diagonal needs 6 values, got {len(self.covariance)}")
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve(estimator: PoseEstimator, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
          covariance=DEFAULT_COVARIANCE) -> None:
    """Run until interrupted."""
    with InitPoseServer(estimator, host, port, covariance) as srv:
        log.info("initpose service listening on %s:%d (%s checkpoint)", host, srv.port, estimator.modality)
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            log.info("shutting down")
