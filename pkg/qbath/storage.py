"""
File formats: correlation tensors (CSV + JSON), measurement records (.qbr
binary + CSV) and run manifests.

A .qbr file is MAGIC, a 4-byte little-endian header length, a UTF-8 JSON
header, then numpy.packbits of (outcomes == +1) in row-major shots x slots order.
"""

import csv
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from .correlations import CorrelationTensor
from .measurement import MeasurementRecord

logger = logging.getLogger(__name__)

MAGIC = b"QBR1"


def save_tensor(tensor: CorrelationTensor, out_dir, stem: str) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    tensor.to_csv(csv_path)
    tensor.to_json(json_path)
    logger.info(f"Wrote {len(tensor)} correlations to {csv_path}")
    return csv_path, json_path


def load_tensor(path) -> CorrelationTensor:
    path = Path(path)
    if path.suffix == ".json":
        return CorrelationTensor.from_json(path)
    return CorrelationTensor.from_csv(path)


def _record_header(record: MeasurementRecord) -> Dict[str, Any]:
    return {
        "shots": record.shots,
        "slots": record.num_slots,
        "seed": record.seed,
        "mode": record.mode,
        "protocol": record.protocol,
        "period": record.period,
        "schedule_hash": record.schedule_hash,
        "times": list(record.times),
        "config_ids": list(record.config_ids),
        "used": list(record.used),
        "metadata": record.metadata,
    }


def save_record(record: MeasurementRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_record_header(record), sort_keys=True).encode("utf-8")
    body = np.packbits(record.outcomes.ravel() == 1)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(body.tobytes())
    return path


def load_record(path) -> MeasurementRecord:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise OSError(f"{path} is not a measurement record file")
        (length,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(length).decode("utf-8"))
        body = np.frombuffer(f.read(), dtype=np.uint8)
    shots, slots = header["shots"], header["slots"]
    bits = np.unpackbits(body, count=shots * slots).reshape(shots, slots)
    return MeasurementRecord(
        outcomes=np.where(bits == 1, 1, -1).astype(np.int8),
        times=tuple(header["times"]),
        config_ids=tuple(header["config_ids"]),
        used=tuple(header["used"]),
        seed=header["seed"],
        mode=header["mode"],
        protocol=header["protocol"],
        period=header["period"],
        schedule_hash=header["schedule_hash"],
        metadata=header.get("metadata", {}),
    )


def record_to_csv(record: MeasurementRecord, path) -> Path:
    """One row per shot; header carries slot index, time and used/idle flag"""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["shot"] + [
            f"slot{k}@{t!r}:{'used' if u else 'idle'}" for k, (t, u) in enumerate(zip(record.times, record.used))])
        for shot, row in enumerate(record.outcomes):
            writer.writerow([shot] + row.tolist())
    return path


def write_rows(path, fields: Sequence[str], rows: Sequence[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def write_json(path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return path


def read_json(path) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)
