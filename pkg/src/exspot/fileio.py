"""On-disk formats: dataset manifests, feature files, proposals, checkpoints.

Feature file layout (all integers and floats little-endian):

    bytes 0..11   magic "EXSPOT-FEAT\\0"
    bytes 12..15  u32 format version (currently 1)
    bytes 16..19  u32 row count (frames)
    bytes 20..23  u32 width per stream
    then          rows*width float32 for the image-like stream, row-major,
    then          rows*width float32 for the flow-like stream.

Checkpoint layout:

    bytes 0..11   magic "EXSPOT-CKPT\\0"
    bytes 12..15  u32 format version (currently 1)
    bytes 16..19  u32 header length in bytes
    then          UTF-8 JSON header (config snapshot, epoch, named array
                  shapes, optimizer scalars, SHA-256 of the payload),
    then          the payload: every named array as float32 little-endian in
                  header order (parameters first, optimizer moments after).

Training math is float64; serialization truncates to float32, so a loaded
checkpoint saves back byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationError, ConfigMismatchError, FormatError
from .labels import CLASSES, GroundTruth
from .network import SpotterConfig, SpotterParams, init_params
from .optim import Adam
from .proposals import Proposal
from .scoring import EvalReport, TABLE_HEADER
from .synthetic import SynthVideo

FEATURE_MAGIC = b"EXSPOT-FEAT\x00"
CHECKPOINT_MAGIC = b"EXSPOT-CKPT\x00"
FORMAT_VERSION = 1


def _ensure_parent(path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# feature files


def write_feature_file(path: Path, image: np.ndarray, flow: np.ndarray) -> None:
    image = np.asarray(image)
    flow = np.asarray(flow)
    if image.shape != flow.shape or image.ndim != 2:
        raise FormatError(f"stream shapes differ: {image.shape} vs {flow.shape}")
    rows, width = image.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, rows, width))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_feature_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:12] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature file")
    version, rows, width = struct.unpack("<III", raw[12:24])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported feature version {version}")
    stream_bytes = rows * width * 4
    if len(raw) != 24 + 2 * stream_bytes:
        raise FormatError(
            f"{path}: expected {24 + 2 * stream_bytes} bytes, found {len(raw)}"
        )
    image = np.frombuffer(raw, dtype="<f4", count=rows * width, offset=24)
    flow = np.frombuffer(raw, dtype="<f4", count=rows * width, offset=24 + stream_bytes)
    return (
        image.reshape(rows, width).astype(np.float64),
        flow.reshape(rows, width).astype(np.float64),
    )


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class VideoRecord:
    video_id: str
    subject_id: str
    fps: float
    frame_count: int
    feature_file: str
    gts: list[GroundTruth]


def write_dataset(videos: list[SynthVideo], out_dir: Path) -> Path:
    """Write feature files plus manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for v in sorted(videos, key=lambda v: v.video_id):
        rel = f"features/{v.video_id}.feat"
        write_feature_file(out_dir / rel, v.image, v.flow)
        entries.append(
            {
                "video_id": v.video_id,
                "subject_id": v.subject_id,
                "fps": v.fps,
                "frame_count": v.frame_count,
                "feature_file": rel,
                "annotations": [
                    {"onset": g.onset, "offset": g.offset, "class": g.label}
                    for g in v.gts
                ],
            }
        )
    manifest = {"format": "exspot-dataset", "version": FORMAT_VERSION, "videos": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(data_dir: Path) -> list[VideoRecord]:
    data_dir = Path(data_dir)
    path = data_dir / "manifest.json"
    if not path.is_file():
        raise FormatError(f"{path}: manifest not found")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != "exspot-dataset":
        raise FormatError(f"{path}: not an exspot dataset manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest version")
    records = []
    for entry in manifest["videos"]:
        try:
            gts = [
                GroundTruth(int(a["onset"]), int(a["offset"]), str(a["class"]))
                for a in entry["annotations"]
            ]
        except AnnotationError as exc:
            raise AnnotationError(f"video {entry.get('video_id')}: {exc}") from exc
        records.append(
            VideoRecord(
                video_id=str(entry["video_id"]),
                subject_id=str(entry["subject_id"]),
                fps=float(entry["fps"]),
                frame_count=int(entry["frame_count"]),
                feature_file=str(entry["feature_file"]),
                gts=gts,
            )
        )
    ids = [r.video_id for r in records]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate video ids")
    return records


def load_record_features(data_dir: Path, record: VideoRecord) -> tuple[np.ndarray, np.ndarray]:
    image, flow = read_feature_file(Path(data_dir) / record.feature_file)
    if image.shape[0] != record.frame_count:
        raise FormatError(
            f"{record.video_id}: manifest says {record.frame_count} frames, "
            f"feature file has {image.shape[0]}"
        )
    return image, flow


# ---------------------------------------------------------------------------
# proposals and probabilities


def write_proposals(path: Path, by_video: dict[str, list[Proposal]]) -> None:
    _ensure_parent(path)
    with open(path, "w") as fh:
        for vid in sorted(by_video):
            for p in sorted(by_video[vid], key=lambda p: p.onset):
                fh.write(
                    json.dumps(
                        {
                            "video_id": vid,
                            "onset": p.onset,
                            "offset": p.offset,
                            "class": p.label,
                            "confidence": p.confidence,
                        }
                    )
                    + "\n"
                )


def read_proposals(path: Path) -> dict[str, list[Proposal]]:
    out: dict[str, list[Proposal]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            label = str(d["class"])
            if label not in CLASSES:
                raise FormatError(f"unknown class {label!r}")
            p = Proposal(int(d["onset"]), int(d["offset"]), label, float(d["confidence"]))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad proposal line ({exc})") from exc
        out.setdefault(str(d["video_id"]), []).append(p)
    return out


def write_probabilities(path: Path, by_video: dict[str, np.ndarray]) -> None:
    """One JSON line per video holding the valid-prefix probabilities."""
    _ensure_parent(path)
    with open(path, "w") as fh:
        for vid in sorted(by_video):
            probs = np.asarray(by_video[vid], dtype=np.float64)
            fh.write(json.dumps({"video_id": vid, "probs": probs.tolist()}) + "\n")


def read_probabilities(path: Path) -> dict[str, np.ndarray]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out[str(d["video_id"])] = np.asarray(d["probs"], dtype=np.float64)
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad probability line ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: SpotterConfig
    params: SpotterParams
    epoch: int
    train_state: dict
    adam_arrays: dict[str, np.ndarray] | None
    adam_scalars: dict | None


def save_checkpoint(
    path: Path,
    config: SpotterConfig,
    params: SpotterParams,
    epoch: int,
    adam: Adam | None = None,
    train_state: dict | None = None,
) -> None:
    named = list(params.named())
    arrays = [(name, t.data) for name, t in named]
    adam_meta = None
    if adam is not None:
        state = adam.state_arrays()
        arrays += [(name, state[name]) for name in sorted(state)]
        adam_meta = {
            "step_count": adam.step_count,
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "arrays": sorted(state),
        }
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in arrays
    )
    header = {
        "config": config.to_dict(),
        "epoch": int(epoch),
        "train_state": train_state or {},
        "params": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "adam": adam_meta,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    _ensure_parent(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path: Path, expect: SpotterConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:12] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, header_len = struct.unpack("<II", raw[12:20])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    payload = raw[20 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise FormatError(f"{path}: payload checksum mismatch")
    config = SpotterConfig.from_dict(header["config"])
    if expect is not None and expect != config:
        diffs = [
            f"{k}: checkpoint={v} run={getattr(expect, k)}"
            for k, v in config.to_dict().items()
            if getattr(expect, k) != v
        ]
        raise ConfigMismatchError(
            f"{path}: checkpoint config differs from run config ({'; '.join(diffs)})"
        )
    arrays = {}
    offset = 0
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        if chunk.size != n:
            raise FormatError(f"{path}: payload truncated at {meta['name']}")
        arrays[meta["name"]] = chunk.reshape(shape).astype(np.float64)
        offset += n * 4
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")

    params = init_params(config, np.random.default_rng(0))
    for name, tensor in params.named():
        arr = arrays.pop(name, None)
        if arr is None:
            raise FormatError(f"{path}: missing parameter {name}")
        if arr.shape != tensor.data.shape:
            raise FormatError(
                f"{path}: parameter {name} shape {arr.shape} vs {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(arr)
    adam_meta = header.get("adam")
    adam_arrays = None
    scalars = None
    if adam_meta is not None:
        adam_arrays = {name: arrays.pop(name) for name in adam_meta["arrays"]}
        scalars = {k: adam_meta[k] for k in ("step_count", "lr", "beta1", "beta2", "eps")}
    return Checkpoint(
        config=config,
        params=params,
        epoch=int(header["epoch"]),
        train_state=dict(header.get("train_state", {})),
        adam_arrays=adam_arrays,
        adam_scalars=scalars,
    )


# ---------------------------------------------------------------------------
# reports


def report_to_dict(report: EvalReport) -> dict:
    return {
        "fold": report.fold,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "recall_me": report.recall_micro,
        "recall_mae": report.recall_macro,
        "tp_me": report.tp_micro,
        "gt_me": report.gt_micro,
        "tp_mae": report.tp_macro,
        "gt_mae": report.gt_macro,
    }


def write_report(path_prefix: Path, reports: list[EvalReport]) -> None:
    """Write <prefix>.json and a table-style <prefix>.txt."""
    prefix = Path(path_prefix)
    _ensure_parent(prefix)
    prefix.with_suffix(".json").write_text(
        json.dumps([report_to_dict(r) for r in reports], indent=2) + "\n"
    )
    lines = [TABLE_HEADER] + [r.table_row() for r in reports]
    prefix.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def write_sweep_svg(
    path: Path,
    thresholds: list[float],
    reports: list[EvalReport],
    counts: list[int],
) -> None:
    """Small self-contained precision/recall-vs-threshold plot."""
    width, height = 560, 360
    left, right, top, bottom = 60, 20, 30, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    n = len(thresholds)
    xs = [left + plot_w * (i / max(n - 1, 1)) for i in range(n)]

    def poly(values, color):
        pts = " ".join(
            f"{x:.1f},{top + plot_h * (1.0 - v):.1f}" for x, v in zip(xs, values)
        )
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="2"/>'
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#999"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1.0 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
            'stroke="#eee"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="11">{frac:.2f}</text>'
        )
    for x, theta, count in zip(xs, thresholds, counts):
        parts.append(
            f'<text x="{x:.1f}" y="{top + plot_h + 18}" text-anchor="middle" '
            f'font-size="11">{theta:g}</text>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{top + plot_h + 34}" text-anchor="middle" '
            f'font-size="10" fill="#666">n={count}</text>'
        )
    parts.append(poly([r.precision for r in reports], "#c0392b"))
    parts.append(poly([r.recall for r in reports], "#2980b9"))
    parts.append(poly([r.f1 for r in reports], "#27ae60"))
    parts.append(
        f'<text x="{left}" y="18" font-size="12">'
        'precision (red), recall (blue), F1 (green) vs decode threshold</text>'
    )
    parts.append(
        f'<text x="{left + plot_w / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        'font-size="11">threshold (proposal count below)</text>'
    )
    parts.append("</svg>")
    _ensure_parent(path)
    Path(path).write_text("\n".join(parts) + "\n")
