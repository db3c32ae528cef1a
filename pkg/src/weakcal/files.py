"""On-disk formats.

records CSV
    header row, columns ``id, score, label, conf, source, g0 .. g{m-1}``;
    only ``score`` is mandatory.  Empty cells mean "absent".  Group flags are
    0/1 and ``g0`` is the first subgroup (table row 1).
view bundle
    a directory with one records CSV per source (``<source>.csv``) and a
    ``manifest.json`` carrying the regime, ``pi_hat``, mixture parameters,
    seeds and counts.
"""

from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .decon import WeakBags
from .errors import DataError
from .witness import Records

SOURCE_TAGS = ("lab", "pos", "unl", "u1", "u2", "pconf", "sup", "inf", "sim", "dis", "pair-a", "pair-b")
_GROUP_COL = re.compile(r"^g(\d+)$")


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None
    if not np.isfinite(val):
        raise DataError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return val


def read_records(path: str | Path, return_sources: bool = False):
    """Parse a records CSV into :class:`Records` (plus the source column when asked)."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "score" not in header:
            raise DataError(f"{path}: missing required column 'score'")
        group_cols = sorted(((int(m.group(1)), i) for i, h in enumerate(header) if (m := _GROUP_COL.match(h))))
        if [k for k, _ in group_cols] != list(range(len(group_cols))):
            raise DataError(f"{path}: group columns must be g0..g{{m-1}} without gaps")
        col = {h: i for i, h in enumerate(header)}
        rows = list(reader)

    n = len(rows)
    if n == 0:
        raise DataError(f"{path}: no data rows")
    score = np.empty(n)
    groups = np.zeros((n, len(group_cols)), dtype=bool)
    opt = {k: [None] * n for k in ("id", "label", "conf", "source")}
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
        score[r] = _parse_float(row[col["score"]], line, "score")
        if not 0.0 <= score[r] <= 1.0:
            raise DataError(f"{path}: row {line}, column 'score': {score[r]} outside [0, 1]")
        for k, (gi, ci) in enumerate(group_cols):
            cell = row[ci].strip()
            if cell not in ("0", "1"):
                raise DataError(f"{path}: row {line}, column 'g{gi}': group flag must be 0 or 1, got {cell!r}")
            groups[r, k] = cell == "1"
        for key in opt:
            if key in col and row[col[key]].strip() != "":
                opt[key][r] = row[col[key]].strip()

    def column(key, conv):
        vals = opt[key]
        present = [v is not None for v in vals]
        if not any(present):
            return None
        if not all(present):
            first = present.index(False) + 2
            raise DataError(f"{path}: row {first}, column {key!r}: value missing while other rows have one")
        return np.array([conv(v, i + 2) for i, v in enumerate(vals)])

    def to_label(v, line):
        if v not in ("0", "1"):
            raise DataError(f"{path}: row {line}, column 'label': expected 0 or 1, got {v!r}")
        return int(v)

    def to_conf(v, line):
        c = _parse_float(v, line, "conf")
        if not 0.0 < c <= 1.0:
            raise DataError(f"{path}: row {line}, column 'conf': {c} outside (0, 1]")
        return c

    ids = column("id", lambda v, line: v)
    recs = Records(score, groups, column("label", to_label), column("conf", to_conf),
                   ids if ids is not None else np.arange(n).astype(str))
    if return_sources:
        return recs, opt["source"]
    return recs


def records_csv(recs: Records, source: str | None = None) -> str:
    lines = [",".join(["id", "score", "label", "conf", "source"] + [f"g{k}" for k in range(recs.m)])]
    ids = recs.ids if recs.ids is not None else np.arange(len(recs))
    for i in range(len(recs)):
        cells = [
            str(ids[i]),
            repr(float(recs.score[i])),
            "" if recs.label is None else str(int(recs.label[i])),
            "" if recs.conf is None else repr(float(recs.conf[i])),
            source or "",
        ]
        cells += ["1" if g else "0" for g in recs.groups[i]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_view(directory: str | Path, bags: WeakBags, manifest: dict) -> None:
    directory = Path(directory)
    for tag, recs in bags.sources.items():
        atomic_write(directory / f"{tag}.csv", records_csv(recs, tag))
    atomic_write(directory / "manifest.json", dump_json(manifest))


def read_view(directory: str | Path) -> tuple[WeakBags, dict]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"view directory {directory} does not exist")
    manifest_path = directory / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: invalid JSON ({exc.msg})") from None
    sources = {}
    for tag in SOURCE_TAGS:
        p = directory / f"{tag}.csv"
        if p.exists():
            sources[tag] = read_records(p)
    if not sources:
        raise DataError(f"{directory}: no source CSV files found")
    ms = {r.m for r in sources.values()}
    if len(ms) != 1:
        raise DataError(f"{directory}: source files disagree on the number of groups")
    meta = {k: v for k, v in manifest.items() if k in ("gamma1", "gamma2", "regime")}
    return WeakBags(sources, manifest.get("pi_hat"), meta), manifest
