"""Dataset serialization: gate maps, sensor logs, trajectories, configs.

Formats (see FORMATS.md for the bit-exact contract):
  * gate map          JSON document, explicit corners or center-pose form
  * IMU / detections  line-delimited JSON, one record per line
  * trajectories      CSV with header t,px,py,pz,vx,vy,vz,qw,qx,qy,qz
  * update reports    line-delimited JSON

Floats are written with repr (shortest round-trip, 17 significant digits),
so simulator-written logs re-read bit-exactly. All writes are atomic
(write temp then rename).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict
from typing import Optional

import numpy as np

from .eskf import EskfConfig, UpdateReport
from .fgo import FgoWeights
from .frontend import VisionConfig
from .geometry import CameraModel, Extrinsics
from .sim import CorruptionSpec, TrajectorySpec
from .state import (
    Gate,
    GateDetection,
    GateMap,
    ImuSample,
    NoiseParams,
    NonMonotonicTimestamp,
    Trajectory,
)

TRAJECTORY_HEADER = "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz"


class ParseError(ValueError):
    """Malformed input file; the message carries line/field context."""


class ValidationError(ValueError):
    """Structurally valid input that violates a domain invariant."""


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# gate map
# ---------------------------------------------------------------------------

def load_gate_map(path: str) -> GateMap:
    """Parse a gate-map JSON file with explicit-corner or pose-form entries."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict) or "gates" not in doc:
        raise ParseError(f"{path}: top-level object must contain 'gates'")
    gates = []
    for i, entry in enumerate(doc["gates"]):
        gid = entry.get("id")
        if gid is None:
            raise ParseError(f"{path}: gate entry {i} missing 'id'")
        try:
            if "corners" in entry:
                corners = np.asarray(entry["corners"], dtype=float)
                if corners.shape != (4, 3):
                    raise ValueError("'corners' must be 4 x 3")
                gate = Gate(id=int(gid), corners_w=corners)
            elif "center" in entry:
                ypr = entry.get("ypr_deg", [0.0, 0.0, 0.0])
                gate = Gate.from_pose(
                    int(gid), np.asarray(entry["center"], dtype=float),
                    math.radians(ypr[0]), math.radians(ypr[1]),
                    math.radians(ypr[2]),
                    float(entry["width"]), float(entry["height"]))
            else:
                raise ValueError("gate needs 'corners' or 'center'")
        except ValidationError:
            raise
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}: gate entry {i} (id {gid}): {exc}")
        except ValueError as exc:
            raise ValidationError(f"{path}: gate id {gid}: {exc}")
        gates.append(gate)
    try:
        return GateMap(gates=gates)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}")


def save_gate_map(gate_map: GateMap, path: str) -> None:
    doc = {"gates": [
        {"id": g.id, "corners": [[_f for _f in map(float, c)] for c in g.corners_w]}
        for g in gate_map
    ]}
    _atomic_write(path, json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# sensor logs (line-delimited JSON)
# ---------------------------------------------------------------------------

def save_imu_log(samples, path: str) -> None:
    lines = []
    for s in samples:
        lines.append(json.dumps({
            "t": float(s.t),
            "a": [float(x) for x in s.a_m],
            "w": [float(x) for x in s.w_m],
        }))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def save_detection_log(detections, path: str) -> None:
    lines = []
    for det in detections:
        corners = []
        for lab in range(4):
            if det.scores[lab] > 0:
                corners.append({
                    "u": float(det.corners_px[lab, 0]),
                    "v": float(det.corners_px[lab, 1]),
                    "score": float(det.scores[lab]),
                })
            else:
                corners.append(None)
        rec = {"t": float(det.t), "corners": corners}
        if det.gate_id is not None:
            rec["gate_id"] = int(det.gate_id)
        lines.append(json.dumps(rec))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def _parse_jsonl(path: str):
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc.msg}")


def load_imu_log(path: str):
    samples = []
    last_t = None
    for lineno, rec in _parse_jsonl(path):
        try:
            s = ImuSample(t=float(rec["t"]),
                          a_m=np.asarray(rec["a"], dtype=float),
                          w_m=np.asarray(rec["w"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad IMU record: {exc}")
        if last_t is not None and s.t <= last_t:
            raise NonMonotonicTimestamp(
                f"{path}:{lineno}: t {s.t} <= previous {last_t}")
        last_t = s.t
        samples.append(s)
    return samples


def load_detection_log(path: str):
    detections = []
    last_t = None
    for lineno, rec in _parse_jsonl(path):
        try:
            corners = rec["corners"]
            px = np.full((4, 2), np.nan)
            scores = np.zeros(4)
            for lab in range(4):
                c = corners[lab]
                if c is not None:
                    px[lab] = (float(c["u"]), float(c["v"]))
                    scores[lab] = float(c["score"])
            det = GateDetection(t=float(rec["t"]), scores=scores,
                                corners_px=px, gate_id=rec.get("gate_id"))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad detection record: {exc}")
        if last_t is not None and det.t < last_t:
            raise NonMonotonicTimestamp(
                f"{path}:{lineno}: t {det.t} < previous {last_t}")
        last_t = det.t
        detections.append(det)
    return detections


def load_sensor_logs(imu_path: str, det_path: str):
    return load_imu_log(imu_path), load_detection_log(det_path)


# ---------------------------------------------------------------------------
# trajectories (CSV)
# ---------------------------------------------------------------------------

def save_trajectory(traj: Trajectory, path: str) -> None:
    lines = [TRAJECTORY_HEADER]
    for i in range(len(traj)):
        row = ([traj.t[i]] + list(traj.p[i]) + list(traj.v[i]) + list(traj.q[i]))
        lines.append(",".join(_fmt(x) for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_trajectory(path: str) -> Trajectory:
    with open(path) as f:
        header = f.readline().strip()
        if header != TRAJECTORY_HEADER:
            raise ParseError(f"{path}: expected header {TRAJECTORY_HEADER!r}")
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 11:
                raise ParseError(f"{path}:{lineno}: expected 11 fields")
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}")
    if not rows:
        raise ParseError(f"{path}: empty trajectory")
    arr = np.array(rows)
    return Trajectory(t=arr[:, 0], p=arr[:, 1:4], v=arr[:, 4:7], q=arr[:, 7:11])


def save_bias_log(t, b_a, b_w, path: str) -> None:
    lines = []
    for i in range(len(t)):
        lines.append(json.dumps({
            "t": float(t[i]),
            "ba": [float(x) for x in b_a[i]],
            "bw": [float(x) for x in b_w[i]],
        }))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_bias_log(path: str):
    t, ba, bw = [], [], []
    for lineno, rec in _parse_jsonl(path):
        try:
            t.append(float(rec["t"]))
            ba.append([float(x) for x in rec["ba"]])
            bw.append([float(x) for x in rec["bw"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad bias record: {exc}")
    return np.array(t), np.array(ba), np.array(bw)


def save_reports(reports, path: str) -> None:
    lines = []
    for rep in reports:
        lines.append(json.dumps({
            "t": rep.t,
            "applied": rep.applied,
            "dropped_frame": rep.dropped_frame,
            "entries": [
                {"gate_id": e.gate_id, "label": e.label, "e": e.e, "w": e.w,
                 "skipped": e.skipped} for e in rep.entries
            ],
        }))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _camera_from_dict(d: dict) -> CameraModel:
    return CameraModel(**d)


def _extrinsics_from_dict(d: dict) -> Extrinsics:
    return Extrinsics(q_bc=np.asarray(d["q_bc"], dtype=float),
                      p_bc=np.asarray(d["p_bc"], dtype=float))


def _noise_from_dict(d: dict) -> NoiseParams:
    kw = dict(d)
    if "gravity" in kw:
        kw["gravity"] = np.asarray(kw["gravity"], dtype=float)
    return NoiseParams(**kw)


class RunConfig:
    """Single JSON config with per-module sections; absent sections fall back
    to the documented defaults."""

    def __init__(self, doc: dict, base_dir: str = "."):
        from .pipeline import default_camera, default_extrinsics

        self.doc = doc
        self.base_dir = base_dir
        self.camera = (_camera_from_dict(doc["camera"])
                       if "camera" in doc else default_camera())
        self.extrinsics = (_extrinsics_from_dict(doc["extrinsics"])
                           if "extrinsics" in doc else default_extrinsics())
        self.noise = (_noise_from_dict(doc["noise"])
                      if "noise" in doc else NoiseParams())
        eskf_kw = dict(doc.get("eskf", {}))
        if "initial_cov_diag" in eskf_kw:
            eskf_kw["initial_cov_diag"] = np.asarray(
                eskf_kw["initial_cov_diag"], dtype=float)
        self.eskf = EskfConfig(noise=self.noise, **eskf_kw)
        self.vision = VisionConfig(**doc.get("vision", {}))
        fgo_kw = dict(doc.get("fgo", {}))
        for key in ("sigma_corner", "sigma_prior", "sigma_ext", "sigma_imu"):
            if key in fgo_kw and fgo_kw[key] is not None:
                fgo_kw[key] = np.asarray(fgo_kw[key], dtype=float)
        if "sigma_corner" not in fgo_kw:
            fgo_kw["sigma_corner"] = (self.eskf.r_pixel_sigma ** 2) * np.eye(2)
        self.fgo = FgoWeights(**fgo_kw)
        sim = doc.get("simulate", {})
        self.trajectory = (TrajectorySpec(**sim["trajectory"])
                           if "trajectory" in sim else None)
        corr_kw = dict(sim.get("corruption", {}))
        if "bias_true" in corr_kw:
            corr_kw["bias_true"] = (tuple(corr_kw["bias_true"][0]),
                                    tuple(corr_kw["bias_true"][1]))
        self.corruption = CorruptionSpec(**corr_kw)
        self.gates = sim.get("gates", {"count": 8})
        self.seed = int(doc.get("seed", 0))

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
        try:
            return cls(doc, base_dir=os.path.dirname(os.path.abspath(path)))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: {exc}")


def save_metrics(metrics: dict, path: str) -> None:
    _atomic_write(path, json.dumps(metrics, indent=1, sort_keys=True) + "\n")


def save_error_series(err, path: str) -> None:
    lines = ["t,e_t,e_r_deg,e_v"]
    for i in range(len(err.t)):
        lines.append(",".join(_fmt(x) for x in
                              (err.t[i], err.translation[i],
                               err.rotation_deg[i], err.velocity[i])))
    _atomic_write(path, "\n".join(lines) + "\n")
