"""Line-oriented sensor log.

::

    HEADER {"version": 1, "imu_rate": 200.0, ...}
    IMU t gx gy gz ax ay az
    CONTACT t c0 c1 ...
    LO t foot fx fy fz dfx dfy dfz
    TRUTH t px py pz vx vy vz qx qy qz qw f0x f0y f0z ... bax bay baz bwx bwy bwz
    VO_ABS t t_c qx qy qz qw
    VO_INC t t_i t_j dx dy dz qx qy qz qw

``t`` is the time the record becomes available to the estimator.  Floats
are written with ``repr`` so a write/read cycle is exact.  Records are sorted
by time and, at equal times, by the tag order above.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure, LogParse

FORMAT_VERSION = 1

TAG_ORDER = {"IMU": 0, "CONTACT": 1, "LO": 2, "TRUTH": 3, "VO_ABS": 4, "VO_INC": 5}


@dataclass(frozen=True)
class ImuRecord:
    t: float
    gyro: tuple
    accel: tuple
    tag = "IMU"

    def fields(self) -> list:
        return [*self.gyro, *self.accel]


@dataclass(frozen=True)
class ContactRecord:
    t: float
    flags: tuple
    tag = "CONTACT"

    def fields(self) -> list:
        return [int(f) for f in self.flags]


@dataclass(frozen=True)
class LoRecord:
    t: float
    foot: int
    fk: tuple
    fk_dot: tuple
    tag = "LO"

    def fields(self) -> list:
        return [self.foot, *self.fk, *self.fk_dot]


@dataclass(frozen=True)
class TruthRecord:
    t: float
    p: tuple
    v: tuple
    q: tuple
    p_foot: tuple   # flattened, 3 per foot
    b_a: tuple
    b_omega: tuple
    tag = "TRUTH"

    def fields(self) -> list:
        return [*self.p, *self.v, *self.q, *self.p_foot, *self.b_a, *self.b_omega]

    @property
    def n_feet(self) -> int:
        return len(self.p_foot) // 3


@dataclass(frozen=True)
class VoAbsRecord:
    t: float
    t_c: float
    q: tuple
    tag = "VO_ABS"

    def fields(self) -> list:
        return [self.t_c, *self.q]


@dataclass(frozen=True)
class VoIncRecord:
    t: float
    t_i: float
    t_j: float
    translation: tuple
    rotation: tuple
    tag = "VO_INC"

    def fields(self) -> list:
        return [self.t_i, self.t_j, *self.translation, *self.rotation]


@dataclass
class SensorLog:
    header: dict
    records: list = field(default_factory=list)

    def of_type(self, cls) -> list:
        return [r for r in self.records if isinstance(r, cls)]

    def sorted(self) -> "SensorLog":
        recs = sorted(self.records, key=lambda r: (r.t, TAG_ORDER[r.tag]))
        return SensorLog(dict(self.header), recs)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def format_record(rec) -> str:
    return " ".join([rec.tag, _fmt(rec.t), *(_fmt(v) for v in rec.fields())])


def _floats(parts, n, lineno, tag):
    if len(parts) != n:
        raise LogParse(f"{tag} record needs {n} values, got {len(parts)}", line=lineno)
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise LogParse(f"bad number in {tag} record", line=lineno) from exc


def parse_record(line: str, lineno: int, n_feet: int):
    tag, *rest = line.split()
    if tag not in TAG_ORDER:
        raise LogParse(f"unknown record tag {tag!r}", line=lineno)
    if not rest:
        raise LogParse("record without timestamp", line=lineno)
    t = _floats(rest[:1], 1, lineno, tag)[0]
    body = rest[1:]
    if tag == "IMU":
        v = _floats(body, 6, lineno, tag)
        return ImuRecord(t, v[:3], v[3:])
    if tag == "CONTACT":
        if len(body) != n_feet or any(b not in ("0", "1") for b in body):
            raise LogParse("CONTACT needs one 0/1 flag per foot", line=lineno)
        return ContactRecord(t, tuple(b == "1" for b in body))
    if tag == "LO":
        if not body:
            raise LogParse("LO record without foot index", line=lineno)
        try:
            foot = int(body[0])
        except ValueError as exc:
            raise LogParse("bad foot index", line=lineno) from exc
        if not 0 <= foot < n_feet:
            raise LogParse("foot index out of range", line=lineno, foot=foot)
        v = _floats(body[1:], 6, lineno, tag)
        return LoRecord(t, foot, v[:3], v[3:])
    if tag == "TRUTH":
        v = _floats(body, 16 + 3 * n_feet, lineno, tag)
        f = 10 + 3 * n_feet
        return TruthRecord(t, v[0:3], v[3:6], v[6:10], v[10:f], v[f:f + 3], v[f + 3:f + 6])
    if tag == "VO_ABS":
        v = _floats(body, 5, lineno, tag)
        return VoAbsRecord(t, v[0], v[1:])
    v = _floats(body, 9, lineno, tag)
    return VoIncRecord(t, v[0], v[1], v[2:5], v[5:9])


def dumps(log: SensorLog) -> str:
    lines = ["HEADER " + json.dumps(log.header, sort_keys=True)]
    lines += [format_record(r) for r in log.records]
    return "\n".join(lines) + "\n"


def loads(text: str) -> SensorLog:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("HEADER "):
        raise LogParse("missing HEADER line", line=1)
    try:
        header = json.loads(lines[0][len("HEADER "):])
    except json.JSONDecodeError as exc:
        raise LogParse("header is not valid JSON", line=1) from exc
    if header.get("version") != FORMAT_VERSION:
        raise LogParse("unsupported log version", line=1, version=header.get("version"))
    n_feet = int(header.get("n_feet", 0))
    records = []
    last = -np.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = parse_record(line, lineno, n_feet)
        if rec.t < last:
            raise LogParse("record out of time order", line=lineno, t=rec.t, previous=last)
        last = rec.t
        records.append(rec)
    return SensorLog(header, records)


def write_log(log: SensorLog, path) -> None:
    try:
        Path(path).write_text(dumps(log))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror}") from exc


def read_log(path) -> SensorLog:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror}") from exc
    return loads(text)


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror}") from exc
