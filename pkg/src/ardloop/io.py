"""On-disk formats: dataset directories, feature files, INI-style configs, CSV logs."""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
import tempfile
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ardloop.core import Tracklet

FEATURE_SUFFIX = ".f32"
LABELS_HEADER = ["tracklet_id", "identity", "camera", "distractor"]


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


class ArtifactError(RuntimeError):
    """A directory is missing files a command needs."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- feature files ---------------------------------------------------------


def feature_header(t: Tracklet) -> dict:
    T, H, W, C = t.frames.shape
    return {
        "tracklet_id": t.tracklet_id,
        "identity": t.identity_gt,
        "camera": t.camera_id,
        "distractor": t.distractor,
        "T": T,
        "H": H,
        "W": W,
        "C": C,
        "dtype": "f32",
        "endian": "little",
    }


def write_feature_file(directory: Path, t: Tracklet) -> None:
    directory = Path(directory)
    payload = np.ascontiguousarray(t.frames, dtype="<f4").tobytes()
    atomic_write_bytes(directory / f"{t.tracklet_id}{FEATURE_SUFFIX}", payload)
    atomic_write_text(directory / f"{t.tracklet_id}.json", json.dumps(feature_header(t), sort_keys=True) + "\n")


def read_feature_file(header_path: Path) -> Tracklet:
    header_path = Path(header_path)
    h = json.loads(header_path.read_text())
    if h.get("dtype") != "f32" or h.get("endian") != "little":
        raise ValueError(f"{header_path}: unsupported dtype/endianness {h.get('dtype')}/{h.get('endian')}")
    shape = (h["T"], h["H"], h["W"], h["C"])
    try:
        payload = header_path.with_suffix(FEATURE_SUFFIX).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"{header_path}: cannot read payload: {exc}") from exc
    if len(payload) != 4 * int(np.prod(shape)):
        raise ArtifactError(f"{header_path}: payload has {len(payload)} bytes, header implies {4 * int(np.prod(shape))}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return Tracklet(h["tracklet_id"], int(h["camera"]), frames, h.get("identity"), bool(h.get("distractor", False)))


def write_dataset(out_dir: Path, tracklets: Sequence[Tracklet], manifest: dict) -> None:
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for t in tracklets:
        write_feature_file(feat_dir, t)
    rows = [
        [t.tracklet_id, "" if t.identity_gt is None else t.identity_gt, t.camera_id, int(t.distractor)]
        for t in tracklets
    ]
    atomic_write_text(out_dir / "labels.csv", csv_text(LABELS_HEADER, rows))
    write_json(out_dir / "manifest.json", manifest)


def read_dataset(dataset_dir: Path) -> list[Tracklet]:
    dataset_dir = Path(dataset_dir)
    labels = dataset_dir / "labels.csv"
    if not labels.is_file() or not (dataset_dir / "features").is_dir():
        raise ArtifactError(f"{dataset_dir} is not a dataset directory (labels.csv/features missing)")
    with labels.open(newline="") as fh:
        ids = [row["tracklet_id"] for row in csv.DictReader(fh)]
    return [read_feature_file(dataset_dir / "features" / f"{i}.json") for i in ids]


# -- configs ---------------------------------------------------------------


def read_config(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parser


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(":", ",").split(",") if x.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def section_to_dataclass(parser, section: str, cls, required: Sequence[str] = (), overrides=None):
    """Build ``cls`` from one config section; unknown keys and missing required keys are errors."""
    overrides = dict(overrides or {})
    has = parser.has_section(section)
    values = dict(parser.items(section)) if has else {}
    for key in required:
        if key not in values:
            raise ConfigError(f"missing required key {key!r} in section [{section}]")
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    defaults = cls()
    for name, raw in values.items():
        kwargs[name] = _coerce(raw, getattr(defaults, name), f"{section}.{name}")
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc
