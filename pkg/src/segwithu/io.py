"""On-disk formats: binary tensors, checkpoints, run configs, CSV reports and datasets."""

import csv
import json
import math
import struct
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path

import numpy as np

from .head import HeadConfig
from .losses import LossWeights, RankingHyper
from .synth import SynthCase, SynthConfig
from .trainer import TrainConfig, TrainHistory

MAGIC = b"SWUT"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_CODES = {np.dtype("float32"): 0, np.dtype("int32"): 1}
_HEADER = struct.Struct("<4sHBB")
_MAX_BYTES = 1 << 40


class FormatError(ValueError):
    """A file that does not follow the expected layout."""


# tensors --------------------------------------------------------------------

def encode_tensor(array):
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}; use float32 or int32")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    if arr.ndim and 0 in arr.shape:
        raise FormatError(f"empty extent in shape {arr.shape}")
    code = _CODES[arr.dtype]
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_tensor(blob):
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, code, rank = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    offset = _HEADER.size
    if len(blob) < offset + 8 * rank:
        raise FormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    if 0 in shape:
        raise FormatError(f"empty extent in shape {shape}")
    count = math.prod(shape)
    nbytes = count * _DTYPES[code].itemsize
    if nbytes > _MAX_BYTES:
        raise FormatError(f"extents {shape} overflow the size limit")
    if len(blob) - offset != nbytes:
        raise FormatError(f"payload holds {len(blob) - offset} bytes, header implies {nbytes}")
    data = np.frombuffer(blob, dtype=_DTYPES[code], count=count, offset=offset)
    return data.reshape(shape).astype(_DTYPES[code].newbyteorder("="))


def write_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode_tensor(blob)


# config (de)serialisation -----------------------------------------------------

def _build(cls, data, where):
    if not isinstance(data, dict):
        raise FormatError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def train_config_to_dict(config):
    return asdict(config)


def train_config_from_dict(data):
    data = dict(data)
    nested = {"weights": LossWeights, "ranking": RankingHyper, "head": HeadConfig}
    for key, cls in nested.items():
        if key in data:
            data[key] = _build(cls, data[key], f"train.{key}")
    return _build(TrainConfig, data, "train")


RUN_KEYS = {"schema_version", "synth", "train", "variant", "splits", "seed", "output_dir"}
DEFAULT_SPLITS = {"train": 50, "val": 20, "test": 30}


def default_run_config():
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "synth": asdict(SynthConfig()),
        "train": asdict(TrainConfig()),
        "variant": "full",
        "splits": dict(DEFAULT_SPLITS),
        "output_dir": None,
    }


def parse_run_config(data):
    """Validate a run-config document; returns (SynthConfig, TrainConfig, variant, splits, seed, output_dir).

    ``seed`` overrides the seeds inside the synth and train blocks.
    """
    if not isinstance(data, dict):
        raise FormatError("run config must be a JSON object")
    unknown = set(data) - RUN_KEYS
    if unknown:
        raise FormatError(f"unknown run-config keys {sorted(unknown)}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {version}")
    seed = data.get("seed")
    synth = dict(data.get("synth", {}))
    train = dict(data.get("train", {}))
    if seed is not None:
        synth["seed"] = train["seed"] = int(seed)
    synth_cfg = _build(SynthConfig, synth, "synth")
    train_cfg = train_config_from_dict(train)
    splits = dict(DEFAULT_SPLITS)
    extra = data.get("splits", {})
    if not isinstance(extra, dict) or set(extra) - set(DEFAULT_SPLITS):
        raise FormatError(f"splits must map a subset of {sorted(DEFAULT_SPLITS)} to counts")
    splits.update({k: int(v) for k, v in extra.items()})
    return synth_cfg, train_cfg, data.get("variant", "full"), splits, train_cfg.seed, data.get("output_dir")


def load_run_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_run_config(data)


def dump_json(path, obj):
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# checkpoints ---------------------------------------------------------------

def save_checkpoint(directory, params, config, history=None):
    """Write ``params/<name>.swut`` tensors plus ``checkpoint.json`` (config, history, tensor index)."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(params):
        fname = f"{name}.swut"
        write_tensor(directory / "params" / fname, np.asarray(params[name], dtype=np.float32))
        index[name] = fname
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": train_config_to_dict(config),
        "params": index,
        "history": None if history is None else {"records": history.records,
                                                 "best_epoch": history.best_epoch},
    }
    dump_json(directory / "checkpoint.json", doc)


def load_checkpoint(directory):
    """Returns (params as float32 arrays, TrainConfig, TrainHistory or None)."""
    directory = Path(directory)
    try:
        doc = json.loads((directory / "checkpoint.json").read_text())
    except OSError as exc:
        raise FormatError(f"no checkpoint in {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt checkpoint.json in {directory}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported checkpoint schema {doc.get('schema_version')}")
    config = train_config_from_dict(doc["config"])
    params = {}
    for name, fname in doc["params"].items():
        params[name] = read_tensor(directory / "params" / fname)
    history = None
    if doc.get("history") is not None:
        history = TrainHistory(records=doc["history"]["records"], best_epoch=doc["history"]["best_epoch"])
    return params, config, history


# datasets ----------------------------------------------------------------

def save_cases(directory, cases):
    """One sub-directory per case holding taps, logits and labels as tensor files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for case in cases:
        d = directory / case.case_id
        d.mkdir(exist_ok=True)
        for m, tap in enumerate(case.taps):
            write_tensor(d / f"tap{m}.swut", np.asarray(tap, dtype=np.float32))
        write_tensor(d / "logits.swut", np.asarray(case.logits, dtype=np.float32))
        write_tensor(d / "labels.swut", np.asarray(case.labels, dtype=np.int32))


def load_cases(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"dataset directory {directory} does not exist")
    cases = []
    for d in sorted(p for p in directory.iterdir() if p.is_dir()):
        taps = []
        while (d / f"tap{len(taps)}.swut").exists():
            taps.append(read_tensor(d / f"tap{len(taps)}.swut"))
        if not taps:
            raise FormatError(f"case {d.name} has no taps")
        logits = read_tensor(d / "logits.swut")
        labels = read_tensor(d / "labels.swut")
        if labels.dtype != np.int32 or logits.dtype != np.float32:
            raise FormatError(f"case {d.name}: logits must be float32 and labels int32")
        if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
            raise FormatError(f"case {d.name}: logits {logits.shape} and labels {labels.shape} disagree")
        cases.append(SynthCase(case_id=d.name, taps=taps, logits=logits, labels=labels))
    if not cases:
        raise FormatError(f"no cases found in {directory}")
    return cases


# CSV ---------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return "" if not math.isfinite(value) else repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path):
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


CASE_COLUMNS = ["case_id", "method", "dice", "brier", "auroc", "aurc"]


def write_case_metrics(path, metrics):
    rows = sorted(metrics, key=lambda m: (m.case_id, m.method))
    write_csv(path, CASE_COLUMNS, [[getattr(m, c) for c in CASE_COLUMNS] for m in rows])


def read_case_metrics(path):
    """{method: {metric: {case_id: value}}} from a per-case CSV; empty cells read as NaN."""
    out = {}
    for row in read_csv(path):
        try:
            for metric in CASE_COLUMNS[2:]:
                cell = row[metric]
                value = float(cell) if cell != "" else math.nan
                out.setdefault(row["method"], {}).setdefault(metric, {})[row["case_id"]] = value
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: malformed metrics row {row}") from exc
    return out
