"""Full-factorial (hO, vc, cAV) campaigns.

Trials are independent, so a campaign is a map over the plan's cells.  The
result order is always the lexicographic order of (hO, vc, cAV, replicate),
whatever the number of workers, and every float is written with 17
significant digits so runs with different worker counts give
byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .contact import ContactParams
from .scenario import FAILED, SimulationSettings, run_trial
from .vehicle import VehicleParams

__all__ = [
    "TABLE_HO_FRACTIONS",
    "TABLE_VC",
    "TABLE_CAV",
    "CSV_COLUMNS",
    "DoePlan",
    "TrialRecord",
    "TrialFailure",
    "CampaignResult",
    "CampaignError",
    "CampaignParseError",
    "run_campaign",
    "save_campaign",
    "load_campaign",
    "sidecar_path",
]

#: obstacle heights as fractions of the wheel radius
TABLE_HO_FRACTIONS = (0.25, 0.50, 0.80, 0.90, 1.00)
TABLE_VC = (3.0, 6.0, 9.0, 12.0, 15.0)  # m/s
TABLE_CAV = (400.0, 800.0, 1600.0, 3200.0, 6400.0)  # N s/m

CSV_COLUMNS = ("hO_m", "vc_mps", "cAV_Nspm", "delta_Ec_J", "pitch_rate_t2_radps", "cdwo_s",
               "dx_w_max_m", "t1_s", "t2_s", "t3_s", "outcome")
SCHEMA_VERSION = 1

# CSV column -> record attribute
_FIELD_OF = dict(zip(CSV_COLUMNS, ("hO", "vc", "cAV", "delta_Ec", "pitch_rate_t2", "cdwo",
                                   "dx_w_max", "t1", "t2", "t3", "outcome")))


class CampaignError(RuntimeError):
    """Campaign aborted; ``partial`` holds what had completed."""

    def __init__(self, message, partial=None, recovery_path=None):
        super().__init__(message)
        self.partial = partial
        self.recovery_path = recovery_path


class CampaignParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column


def _levels(name, values, positive=True):
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValueError(f"plan.{name} must not be empty")
    if any(not math.isfinite(v) for v in vals):
        raise ValueError(f"plan.{name} must be finite")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"plan.{name} must be strictly increasing")
    if positive and vals[0] <= 0:
        raise ValueError(f"plan.{name} must be > 0")
    return vals


@dataclass(frozen=True)
class DoePlan:
    """Levels of the three factors.  Heights in metres."""

    hO_levels: tuple[float, ...]
    vc_levels: tuple[float, ...] = TABLE_VC
    cAV_levels: tuple[float, ...] = TABLE_CAV
    replicate_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hO_levels", _levels("hO_levels", self.hO_levels, positive=False))
        object.__setattr__(self, "vc_levels", _levels("vc_levels", self.vc_levels))
        object.__setattr__(self, "cAV_levels", _levels("cAV_levels", self.cAV_levels))
        if self.hO_levels[0] < 0:
            raise ValueError("plan.hO_levels must be >= 0")
        if self.vc_levels[-1] > 20:
            raise ValueError("plan.vc_levels must lie in (0, 20] m/s")
        if int(self.replicate_count) != self.replicate_count or self.replicate_count < 1:
            raise ValueError("plan.replicate_count must be a positive integer")

    @classmethod
    def default(cls, wheel_radius: float = VehicleParams.wheel_radius) -> DoePlan:
        """The 5 x 5 x 5 grid with heights at 25, 50, 80, 90, 100 % of ``wheel_radius``."""
        return cls(tuple(f * wheel_radius for f in TABLE_HO_FRACTIONS))

    @property
    def n_cells(self) -> int:
        return (len(self.hO_levels) * len(self.vc_levels) * len(self.cAV_levels)
                * self.replicate_count)

    def cells(self):
        """(hO, vc, cAV, replicate) tuples in canonical order."""
        return [(h, v, c, r) for h in self.hO_levels for v in self.vc_levels
                for c in self.cAV_levels for r in range(self.replicate_count)]

    def to_dict(self, wheel_radius: float | None = None) -> dict:
        d = {
            "hO_levels_m": list(self.hO_levels),
            "vc_levels_mps": list(self.vc_levels),
            "cAV_levels_Nspm": list(self.cAV_levels),
            "replicate_count": self.replicate_count,
        }
        if wheel_radius:
            # the same grid in the tabulated units: % of wr and N.s/mm
            d["hO_levels_pct_wr"] = [round(100 * h / wheel_radius, 9) for h in self.hO_levels]
            d["cAV_levels_Nspmm"] = [c / 1000 for c in self.cAV_levels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DoePlan:
        try:
            return cls(tuple(d["hO_levels_m"]), tuple(d["vc_levels_mps"]),
                       tuple(d["cAV_levels_Nspm"]), int(d.get("replicate_count", 1)))
        except KeyError as exc:
            raise CampaignParseError(f"plan is missing '{exc.args[0]}'") from None


@dataclass(frozen=True)
class TrialRecord:
    hO: float
    vc: float
    cAV: float
    delta_Ec: float
    pitch_rate_t2: float
    cdwo: float
    dx_w_max: float
    t1: float
    t2: float
    t3: float
    outcome: str

    def key(self):
        return (self.hO, self.vc, self.cAV)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrialFailure:
    hO: float
    vc: float
    cAV: float
    replicate: int
    diagnostic: str

    def key(self):
        return (self.hO, self.vc, self.cAV)


@dataclass
class CampaignResult:
    plan: DoePlan
    records: list[TrialRecord]
    failures: list[TrialFailure] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records.sort(key=TrialRecord.key)
        self.failures.sort(key=lambda f: (f.key(), f.replicate))

    @property
    def complete(self) -> bool:
        return len(self.records) + len(self.failures) == self.plan.n_cells

    def at(self, hO: float) -> list[TrialRecord]:
        """Records of one obstacle height."""
        return [r for r in self.records if r.hO == hO]

    def lookup(self, hO, vc, cAV) -> TrialRecord | None:
        for r in self.records:
            if r.key() == (hO, vc, cAV):
                return r
        return None


# --- provenance --------------------------------------------------------------------


def _code_version() -> str:
    from . import __version__
    return __version__


def config_hash(plan: DoePlan, vehicle: VehicleParams, contact: ContactParams,
                settings: SimulationSettings) -> str:
    payload = {
        "plan": plan.to_dict(),
        "vehicle": dataclasses.asdict(vehicle),
        "contact": dataclasses.asdict(contact),
        "settings": dataclasses.asdict(settings),
    }
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()


# --- execution -----------------------------------------------------------------------


def _run_cell(args):
    hO, vc, cAV, rep, vehicle, contact, settings = args
    try:
        res = run_trial(vehicle, contact, hO, vc, cAV, settings=settings, keep_series=False)
    except Exception as exc:  # noqa: BLE001 - any trial error becomes a failure record
        return ("failure", TrialFailure(hO, vc, cAV, rep, f"{type(exc).__name__}: {exc}"))
    if res.failed:
        return ("failure", TrialFailure(hO, vc, cAV, rep, res.diagnostic))
    return ("record", TrialRecord(**res.record()))


def _to_json_line(kind, item) -> str:
    return json.dumps({"kind": kind, **dataclasses.asdict(item)}, allow_nan=True)


def _read_recovery(path: Path):
    done = {}
    if not path.exists():
        return done
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError:
                break  # torn final line from an interrupted write
            kind = d.pop("kind")
            item = TrialRecord(**d) if kind == "record" else TrialFailure(**d)
            done.setdefault(item.key(), []).append((kind, item))
    return done


def run_campaign(plan: DoePlan, vehicle: VehicleParams | None = None,
                 contact: ContactParams | None = None, workers: int = 1,
                 settings: SimulationSettings | None = None,
                 recovery_path: str | os.PathLike | None = None) -> CampaignResult:
    """Run every cell of ``plan`` once per replicate.

    With ``recovery_path`` each finished trial is appended to a JSON-lines
    checkpoint; cells already present there are not re-run, so an aborted
    campaign resumes where it stopped.  A failure to write the checkpoint
    aborts with :class:`CampaignError` carrying the partial result.
    """
    if int(workers) != workers or workers < 1:
        raise ValueError("workers must be a positive integer")
    vehicle = vehicle or VehicleParams()
    contact = contact or ContactParams()
    settings = settings or SimulationSettings()
    provenance = {
        "config_hash": config_hash(plan, vehicle, contact, settings),
        "code_version": _code_version(),
    }

    cells = plan.cells()
    outcomes = [None] * len(cells)
    rec_path = Path(recovery_path) if recovery_path is not None else None
    if rec_path is not None:
        done = _read_recovery(rec_path)
        for i, (h, v, c, r) in enumerate(cells):
            prior = done.get((h, v, c))
            if prior:
                kind, item = prior.pop(0)
                outcomes[i] = (kind, item)

    todo = [i for i, o in enumerate(outcomes) if o is None]
    jobs = [(*cells[i], vehicle, contact, settings) for i in todo]

    def partial():
        recs = [o[1] for o in outcomes if o and o[0] == "record"]
        fails = [o[1] for o in outcomes if o and o[0] == "failure"]
        return CampaignResult(plan, recs, fails, dict(provenance))

    def store(i, out):
        outcomes[i] = out
        if rec_path is None:
            return
        try:
            with open(rec_path, "a") as fh:
                fh.write(_to_json_line(*out) + "\n")
        except OSError as exc:
            raise CampaignError(f"cannot write recovery file: {exc}", partial(), rec_path) from exc

    if workers == 1 or len(jobs) <= 1:
        for i, job in zip(todo, jobs):
            store(i, _run_cell(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map yields in submission order, so stores happen in plan order
            for i, out in zip(todo, pool.map(_run_cell, jobs, chunksize=1)):
                store(i, out)
    return partial()


# --- persistence ---------------------------------------------------------------------


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def campaign_csv(result: CampaignResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    rows = [(r.key(), 0, [_fmt(getattr(r, _FIELD_OF[c])) for c in CSV_COLUMNS])
            for r in result.records]
    nan = float("nan")
    for f in result.failures:
        vals = {"hO": f.hO, "vc": f.vc, "cAV": f.cAV, "outcome": FAILED}
        rows.append((f.key(), 1, [_fmt(vals.get(_FIELD_OF[c], nan)) for c in CSV_COLUMNS]))
    for _, _, row in sorted(rows, key=lambda t: (t[0], t[1])):
        w.writerow(row)
    return buf.getvalue()


def sidecar_json(result: CampaignResult, wheel_radius: float | None = None) -> str:
    meta = {
        "schema_version": SCHEMA_VERSION,
        "columns": list(CSV_COLUMNS),
        "plan": result.plan.to_dict(wheel_radius),
        "provenance": result.provenance,
        "failures": [dataclasses.asdict(f) for f in result.failures],
    }
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def save_campaign(result: CampaignResult, path, wheel_radius: float | None = None) -> Path:
    """Write the campaign CSV and its ``.meta.json`` sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(campaign_csv(result))
    os.replace(tmp, path)
    sidecar_path(path).write_text(sidecar_json(result, wheel_radius))
    return path


def _parse_float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise CampaignParseError(f"not a number: {text!r}", line, column) from None


def load_campaign(path) -> CampaignResult:
    """Read a campaign CSV (and its sidecar, if present).

    Rows may come in any order; they are re-sorted to the canonical order.
    Without a sidecar the plan is rebuilt from the distinct levels found.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"campaign file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CampaignParseError("empty file", 1) from None
        header = [h.strip() for h in header]
        for col in CSV_COLUMNS:
            if col not in header:
                raise CampaignParseError("missing column", 1, col)
        unknown = [h for h in header if h not in CSV_COLUMNS]
        if unknown:
            raise CampaignParseError("unexpected column", 1, unknown[0])
        idx = {c: header.index(c) for c in CSV_COLUMNS}
        records, failed_keys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CampaignParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            vals = {}
            for col in CSV_COLUMNS:
                text = row[idx[col]].strip()
                if col == "outcome":
                    vals["outcome"] = text
                else:
                    vals[_FIELD_OF[col]] = _parse_float(text, lineno, col)
            if vals["outcome"] == FAILED:
                failed_keys.append((vals["hO"], vals["vc"], vals["cAV"]))
            else:
                records.append(TrialRecord(**vals))

    meta_file = sidecar_path(path)
    provenance, diagnostics = {}, {}
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        plan = DoePlan.from_dict(meta["plan"])
        provenance = meta.get("provenance", {})
        for f in meta.get("failures", []):
            diagnostics.setdefault((f["hO"], f["vc"], f["cAV"]), []).append(f)
    else:
        keys = [r.key() for r in records] + failed_keys
        if not keys:
            raise CampaignParseError("no rows and no sidecar plan")
        plan = DoePlan(*(tuple(sorted({k[i] for k in keys})) for i in range(3)))

    failures = []
    for key in failed_keys:
        known = diagnostics.get(key)
        if known:
            f = known.pop(0)
            failures.append(TrialFailure(f["hO"], f["vc"], f["cAV"], f["replicate"], f["diagnostic"]))
        else:
            failures.append(TrialFailure(*key, 0, "failed (no diagnostic recorded)"))
    return CampaignResult(plan, records, failures, provenance)
