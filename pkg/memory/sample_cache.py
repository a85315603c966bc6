"""
Persistent store of simulated samples.

CSV with a format line, a header and a checksum trailer:

    # format_version=1
    line_index,step,oa,ab,bc,objective,t_max,reason,sim_version
    0,0,31.0,72.705,257.859,3.2104...,5.91...,ok,fourbar-sim/1
    ...
    # sha256=<hex digest of every byte above this line>

Floats are written with repr so cached rows read back bit-identically.
"""
import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from core.errors import CacheIntegrityError
from core.motion import ObjectiveSample

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
COLUMNS = ("line_index", "step", "oa", "ab", "bc", "objective", "t_max", "reason", "sim_version")
_POINT_TOL = 1e-9

Key = Tuple[int, int]


@dataclass(frozen=True)
class CacheRow:
    line_index: int
    step: int
    design: Tuple[float, float, float]
    t_rms: float
    t_max: float
    reason: str
    sim_version: str

    @property
    def sample(self) -> ObjectiveSample:
        return ObjectiveSample(self.t_rms, self.t_max, self.reason)


def _fmt(x: float) -> str:
    return repr(float(x))


class SampleCache:
    def __init__(self, path, rows: Optional[Dict[Key, CacheRow]] = None):
        self.path = Path(path)
        self.rows: Dict[Key, CacheRow] = dict(rows or {})

    def __len__(self) -> int:
        return len(self.rows)

    # -----------------------------
    # Persistence
    # -----------------------------
    @classmethod
    def load(cls, path) -> "SampleCache":
        path = Path(path)
        if not path.exists():
            logger.info("no sample cache at %s, starting empty", path)
            return cls(path)
        text = path.read_text()
        body, sep, trailer = text.rpartition("# sha256=")
        if not sep:
            raise CacheIntegrityError(f"{path}: checksum trailer missing")
        if hashlib.sha256(body.encode()).hexdigest() != trailer.strip():
            raise CacheIntegrityError(f"{path}: checksum mismatch, cache was modified")

        lines = body.splitlines()
        if not lines or lines[0].strip() != f"# format_version={FORMAT_VERSION}":
            raise CacheIntegrityError(f"{path}: unsupported format line {lines[0] if lines else ''!r}")
        reader = csv.DictReader(io.StringIO("\n".join(lines[1:])))
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise CacheIntegrityError(f"{path}: unexpected columns {reader.fieldnames}")
        rows: Dict[Key, CacheRow] = {}
        try:
            for rec in reader:
                row = CacheRow(
                    line_index=int(rec["line_index"]),
                    step=int(rec["step"]),
                    design=(float(rec["oa"]), float(rec["ab"]), float(rec["bc"])),
                    t_rms=float(rec["objective"]),
                    t_max=float(rec["t_max"]),
                    reason=rec["reason"],
                    sim_version=rec["sim_version"],
                )
                key = (row.line_index, row.step)
                if key in rows:
                    raise CacheIntegrityError(f"{path}: duplicate row for line {key[0]} step {key[1]}")
                rows[key] = row
        except (TypeError, ValueError) as exc:
            raise CacheIntegrityError(f"{path}: malformed row: {exc}") from exc
        logger.info("loaded %d cached samples from %s", len(rows), path)
        return cls(path, rows)

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# format_version={FORMAT_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for key in sorted(self.rows):
            r = self.rows[key]
            writer.writerow([
                r.line_index, r.step, *(_fmt(x) for x in r.design),
                _fmt(r.t_rms), _fmt(r.t_max), r.reason, r.sim_version,
            ])
        body = buf.getvalue()
        return body + f"# sha256={hashlib.sha256(body.encode()).hexdigest()}\n"

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(self.dumps())
        os.replace(tmp, self.path)
        logger.info("wrote %d samples to %s", len(self.rows), self.path)

    # -----------------------------
    # Lookups
    # -----------------------------
    def known(self, version: str, point_of: Callable[[int, int], np.ndarray]) -> Dict[Key, ObjectiveSample]:
        """Rows of `version` whose stored design still matches the planned point."""
        out: Dict[Key, ObjectiveSample] = {}
        stale = 0
        for key, row in self.rows.items():
            if row.sim_version != version:
                stale += 1
                continue
            planned = point_of(*key)
            if np.max(np.abs(np.asarray(row.design) - planned)) > _POINT_TOL * max(1.0, float(np.max(np.abs(planned)))):
                stale += 1
                continue
            out[key] = row.sample
        if stale:
            logger.warning("%d cached samples do not match the current plan and are ignored", stale)
        return out

    def record(self, key: Key, design: Iterable[float], sample: ObjectiveSample, version: str) -> None:
        design = tuple(float(x) for x in design)
        existing = self.rows.get(key)
        if existing is not None and existing.sim_version == version and existing.design == design:
            return
        self.rows[key] = CacheRow(key[0], key[1], design, sample.t_rms, sample.t_max, sample.reason, version)

    def retain(self, keys: Iterable[Key]) -> None:
        keep = set(keys)
        self.rows = {k: v for k, v in self.rows.items() if k in keep}

    def line_values(self, line: int) -> np.ndarray:
        """Leading feasible run of line `line`, ordered by step."""
        values = []
        step = 0
        while (line, step) in self.rows and math.isfinite(self.rows[(line, step)].t_rms):
            values.append(self.rows[(line, step)].t_rms)
            step += 1
        return np.asarray(values, dtype=float)
