from flask import Flask, request, jsonify
from pydantic import ValidationError
from functools import lru_cache
from typing import Any, Dict, Tuple
import logging
import os

from ..config import API_KEY, DATA_DIR, FOVS_CHECKPOINT, FRAME_QUANTUM_S, configure_logging
from ..core.dataset import latest_prediction_time, sample_inputs
from ..core.geometry import align_streams
from ..core.loaders import ingest_text
from ..core.models import CameraModel, SampleSpec, SpanConfig
from ..core.projection import project_to_2d
from ..core.training import load_checkpoint, predict
from ..core.voxel import build_multilevel

configure_logging()
logger = logging.getLogger(__name__)

app = Flask(__name__)


def _error(message: str, status: int = 400, details: Any = None):
    body: Dict[str, Any] = {"error": message}
    if details is not None:
        body["details"] = details
    return jsonify(body), status


def _authorized() -> bool:
    return not API_KEY or request.headers.get("X-API-Key") == API_KEY


def _read_body() -> Tuple[Dict[str, Any], Any]:
    try:
        payload = request.get_json(force=True)
    except Exception as e:
        return {}, _error("Invalid JSON body", details=str(e))
    if not isinstance(payload, dict):
        return {}, _error("Request body must be a single JSON object")
    missing = [k for k in ("points", "trajectory", "gaze") if not isinstance(payload.get(k), str)]
    if missing:
        return {}, _error("Missing stream text", details=missing)
    return payload, None


def _span_config(payload: Dict[str, Any], resolution: int | None = None) -> SpanConfig:
    return SpanConfig(
        cube_length_m=payload.get("cube_length", 3.2),
        resolution=resolution or payload.get("resolution", 16),
    )


@lru_cache(maxsize=2)
def _model(path: str):
    return load_checkpoint(path)


@app.get("/health")
def health():
    return {
        "status": "ok",
        "data_dir": os.path.abspath(DATA_DIR),
        "checkpoint": os.path.abspath(FOVS_CHECKPOINT) if FOVS_CHECKPOINT else None,
    }


@app.post("/lift")
def lift():
    if not _authorized():
        return jsonify({"error": "Unauthorized"}), 401
    payload, err = _read_body()
    if err:
        return err
    try:
        cfg = _span_config(payload)
        quantum = float(payload.get("frame_quantum", FRAME_QUANTUM_S))
        streams = ingest_text(payload["points"], payload["trajectory"], payload["gaze"])
        bundles = align_streams(streams.points, streams.trajectory, streams.gaze, quantum)
        span = build_multilevel(bundles, cfg, quantum)
    except ValidationError as e:
        return _error("Invalid configuration", details=str(e))
    except ValueError as e:
        return _error("Could not lift streams", details=str(e))

    return jsonify({
        "window": list(span.window),
        "origin": list(span.scene.origin),
        "cube_length_m": cfg.cube_length_m,
        "resolution": cfg.resolution,
        "levels": {name: grid.cells().tolist() for name, grid in span.levels.items()},
        "scene_count": span.scene.count(),
    }), 200


@app.post("/forecast")
def forecast():
    if not _authorized():
        return jsonify({"error": "Unauthorized"}), 401
    if not FOVS_CHECKPOINT or not os.path.exists(FOVS_CHECKPOINT):
        return _error("No checkpoint configured", status=503, details=FOVS_CHECKPOINT)
    payload, err = _read_body()
    if err:
        return err
    try:
        model = _model(FOVS_CHECKPOINT)
        spec = SampleSpec(
            t_past_s=payload.get("t_past", model.cfg.frames * 1.0),
            frame_duration_s=payload.get("frame_duration", 1.0),
            frame_quantum_s=float(payload.get("frame_quantum", FRAME_QUANTUM_S)),
            cfg=_span_config(payload, model.cfg.resolution),
        )
        streams = ingest_text(payload["points"], payload["trajectory"], payload["gaze"])
        sample = sample_inputs(streams, latest_prediction_time(streams, spec), spec)
        result = predict(model, sample, float(payload.get("threshold", 0.5)))
    except ValidationError as e:
        return _error("Invalid configuration", details=str(e))
    except ValueError as e:
        return _error("Could not forecast", details=str(e))

    resp: Dict[str, Any] = {
        "sample_time": sample.sample_time,
        "origin": list(sample.origin),
        "levels": {name: grid.cells().tolist() for name, grid in result.binarized().items()},
    }
    if "foveal" in result.levels:
        try:
            projected = project_to_2d(
                result, sample.anchor, CameraModel(), sample.current_gaze, int(payload.get("n_steps", 1))
            )
            resp["gaze_2d"] = {
                "points": [None if not ok else [float(u), float(v)] for (u, v), ok in zip(projected.points, projected.in_frame)],
                "cell": list(projected.target_cell),
            }
        except ValueError as e:
            resp["gaze_2d"] = {"points": [], "note": str(e)}
    return jsonify(resp), 200


if __name__ == "__main__":
    app.run(host="0.0.0.0",
            port=int(os.getenv("PORT", "8000")),
            debug=False,
            use_reloader=False)
