"""Cohort selection: clinical CSV ingestion, patient classification, splits.

Classification rules (evaluated in this order, first failure recorded as the
exclusion reason):

* missing acuity data for either eye        -> excluded, ``insufficient-data``
* patients with an AMD code (362.50/51/52):
    - any other retinal-prefix code         -> excluded, ``other-macular-pathology``
    - no intravitreal injection             -> excluded, ``no-injection``
    - better-seeing eye not worse than
      20/30 (best denominator <= 30)        -> excluded, ``better-eye-acuity-not-worse-than-20/30``
    - otherwise                             -> amd
* patients without an AMD code:
    - any retinal-prefix code               -> excluded, ``retinal-diagnosis``
    - any exam not better than 20/30
      (denominator >= 30, either eye)       -> excluded, ``acuity-not-better-than-20/30``
    - otherwise                             -> normal

"Better than 20/30" is strict (< 30) and "worse than 20/30" is strict (> 30);
exactly 20/30 satisfies neither.  The better-seeing eye is the eye whose best
(lowest) recorded denominator is smallest.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, ScanRejected
from .preprocess import CENTRAL_COUNT, central_indices
from .rng import Rng

NORMAL = "normal"
AMD = "amd"
EXCLUDED = "excluded"

TRAIN = "train"
VALIDATION = "validation"

DEFAULT_RETINAL_PREFIXES = ("361", "362", "363")
DEFAULT_AMD_CODES = ("362.50", "362.51", "362.52")
DEFAULT_ACUITY_CUT = 30.0

TABLE_FILES = {
    "diagnoses": ("diagnoses.csv", ["patient_id", "icd9", "date"]),
    "acuity": ("acuity.csv", ["patient_id", "eye", "denominator", "date"]),
    "injections": ("injections.csv", ["patient_id", "eye", "date"]),
    "scans": ("scans.csv", ["patient_id", "scan_id", "date", "n_slices"]),
}


@dataclass(frozen=True)
class Diagnosis:
    patient_id: str
    icd9: str
    date: str


@dataclass(frozen=True)
class AcuityExam:
    patient_id: str
    eye: str
    denominator: float
    date: str


@dataclass(frozen=True)
class Injection:
    patient_id: str
    eye: str
    date: str


@dataclass(frozen=True)
class Scan:
    patient_id: str
    scan_id: str
    date: str
    n_slices: int


@dataclass
class ClinicalTables:
    diagnoses: list[Diagnosis] = field(default_factory=list)
    acuity_exams: list[AcuityExam] = field(default_factory=list)
    injections: list[Injection] = field(default_factory=list)
    scans: list[Scan] = field(default_factory=list)

    def patient_ids(self) -> list[str]:
        ids = {r.patient_id for r in self.diagnoses}
        ids |= {r.patient_id for r in self.acuity_exams}
        ids |= {r.patient_id for r in self.injections}
        ids |= {r.patient_id for r in self.scans}
        return sorted(ids)


@dataclass(frozen=True)
class CohortLabel:
    patient_id: str
    label: str
    reason: str = ""


@dataclass(frozen=True)
class ManifestRow:
    patient_id: str
    scan_id: str
    slice_index: int
    label: int
    split: str
    path: str


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    rejected_scans: list[str] = field(default_factory=list)

    def split_rows(self, split: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == split]


def _check_date(value: str, context: str) -> str:
    try:
        datetime.date.fromisoformat(value)
    except ValueError as exc:
        raise DataError(f"{context}: date {value!r} is not ISO-8601") from exc
    return value


def _check_eye(value: str, context: str) -> str:
    if value not in ("OD", "OS"):
        raise DataError(f"{context}: eye must be OD or OS, got {value!r}")
    return value


def read_tables(table_dir: str) -> ClinicalTables:
    root = Path(table_dir)
    raw = {}
    for key, (fname, columns) in TABLE_FILES.items():
        path = root / fname
        if not path.exists():
            raise DataError(f"missing table file {path}")
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != columns:
                raise DataError(f"{path}: expected header {','.join(columns)}, got {reader.fieldnames}")
            raw[key] = list(reader)
    tables = ClinicalTables()
    for i, row in enumerate(raw["diagnoses"]):
        ctx = f"diagnoses.csv row {i + 2}"
        tables.diagnoses.append(Diagnosis(row["patient_id"], row["icd9"], _check_date(row["date"], ctx)))
    for i, row in enumerate(raw["acuity"]):
        ctx = f"acuity.csv row {i + 2}"
        try:
            denom = float(row["denominator"])
        except ValueError as exc:
            raise DataError(f"{ctx}: bad denominator {row['denominator']!r}") from exc
        if denom <= 0:
            raise DataError(f"{ctx}: denominator must be positive")
        tables.acuity_exams.append(
            AcuityExam(row["patient_id"], _check_eye(row["eye"], ctx), denom, _check_date(row["date"], ctx))
        )
    for i, row in enumerate(raw["injections"]):
        ctx = f"injections.csv row {i + 2}"
        tables.injections.append(
            Injection(row["patient_id"], _check_eye(row["eye"], ctx), _check_date(row["date"], ctx))
        )
    seen_scan_ids = set()
    for i, row in enumerate(raw["scans"]):
        ctx = f"scans.csv row {i + 2}"
        try:
            n_slices = int(row["n_slices"])
        except ValueError as exc:
            raise DataError(f"{ctx}: bad n_slices {row['n_slices']!r}") from exc
        if row["scan_id"] in seen_scan_ids:
            raise DataError(f"{ctx}: duplicate scan_id {row['scan_id']!r}")
        seen_scan_ids.add(row["scan_id"])
        tables.scans.append(Scan(row["patient_id"], row["scan_id"], _check_date(row["date"], ctx), n_slices))
    return tables


def classify_patient(
    tables: ClinicalTables,
    patient_id: str,
    retinal_code_prefixes: tuple[str, ...] = DEFAULT_RETINAL_PREFIXES,
    amd_codes: tuple[str, ...] = DEFAULT_AMD_CODES,
    acuity_cut: float = DEFAULT_ACUITY_CUT,
) -> CohortLabel:
    """Apply the normal/AMD/excluded rules documented in the module docstring."""
    exams = {"OD": [], "OS": []}
    for e in tables.acuity_exams:
        if e.patient_id == patient_id:
            exams[e.eye].append(e.denominator)
    if not exams["OD"] or not exams["OS"]:
        return CohortLabel(patient_id, EXCLUDED, "insufficient-data")

    codes = [d.icd9 for d in tables.diagnoses if d.patient_id == patient_id]
    amd_set = set(amd_codes)
    has_amd = any(c in amd_set for c in codes)
    other_retinal = any(
        c not in amd_set and any(c.startswith(p) for p in retinal_code_prefixes) for c in codes
    )
    n_injections = sum(1 for r in tables.injections if r.patient_id == patient_id)

    if has_amd:
        if other_retinal:
            return CohortLabel(patient_id, EXCLUDED, "other-macular-pathology")
        if n_injections == 0:
            return CohortLabel(patient_id, EXCLUDED, "no-injection")
        better_eye_best = min(min(exams["OD"]), min(exams["OS"]))
        if not better_eye_best > acuity_cut:
            return CohortLabel(patient_id, EXCLUDED, "better-eye-acuity-not-worse-than-20/30")
        return CohortLabel(patient_id, AMD, "")
    if other_retinal:
        return CohortLabel(patient_id, EXCLUDED, "retinal-diagnosis")
    if any(d >= acuity_cut for d in exams["OD"] + exams["OS"]):
        return CohortLabel(patient_id, EXCLUDED, "acuity-not-better-than-20/30")
    return CohortLabel(patient_id, NORMAL, "")


def classify_all(tables: ClinicalTables, **kwargs) -> list[CohortLabel]:
    return [classify_patient(tables, pid, **kwargs) for pid in tables.patient_ids()]


def split_patients(labels: list[CohortLabel], fraction: float, rng: Rng) -> dict[str, str]:
    """Assign train/validation per patient, stratified within each label group.

    Each group independently sends round-half-up(fraction * n) patients to
    validation, drawn by a seeded shuffle of the sorted patient ids (normal
    group first, then amd, on the same stream).
    """
    assignment: dict[str, str] = {}
    for group in (NORMAL, AMD):
        ids = sorted(l.patient_id for l in labels if l.label == group)
        if not ids:
            raise DataError(f"cannot split: no patients labeled {group}")
        n_val = int(fraction * len(ids) + 0.5)
        rng.shuffle(ids)
        for i, pid in enumerate(ids):
            assignment[pid] = VALIDATION if i < n_val else TRAIN
    return assignment


def build_manifest(
    tables: ClinicalTables,
    labels: list[CohortLabel],
    split: dict[str, str],
    image_root: str,
    rng: Rng,
    count: int = CENTRAL_COUNT,
) -> DatasetManifest:
    """One row per retained central slice; training rows in seeded-shuffled
    order, validation rows sorted. Scans with too few slices are recorded in
    ``rejected_scans`` and skipped."""
    label_by_patient = {l.patient_id: l for l in labels}
    train_rows: list[ManifestRow] = []
    val_rows: list[ManifestRow] = []
    rejected: list[str] = []
    root = Path(image_root)
    for scan in sorted(tables.scans, key=lambda s: s.scan_id):
        lab = label_by_patient.get(scan.patient_id)
        if lab is None or lab.label == EXCLUDED:
            continue
        try:
            indices = central_indices(scan.n_slices, count)
        except ScanRejected:
            rejected.append(scan.scan_id)
            continue
        label01 = 1 if lab.label == AMD else 0
        scan_split = split[scan.patient_id]
        for idx in indices:
            path = root / f"{scan.scan_id}_{idx}.pgm"
            if not path.exists():
                raise DataError(f"manifest references missing image file {path}")
            row = ManifestRow(scan.patient_id, scan.scan_id, idx, label01, scan_split, path.as_posix())
            (train_rows if scan_split == TRAIN else val_rows).append(row)
    rng.shuffle(train_rows)
    val_rows.sort(key=lambda r: (r.patient_id, r.scan_id, r.slice_index))
    return DatasetManifest(rows=train_rows + val_rows, rejected_scans=rejected)


# ---- CSV round-trips --------------------------------------------------------

MANIFEST_HEADER = ["patient_id", "scan_id", "slice_index", "label", "split", "path"]
LABELS_HEADER = ["patient_id", "label", "reason"]


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            writer.writerow([r.patient_id, r.scan_id, r.slice_index, r.label, r.split, r.path])


def read_manifest(path: str) -> DatasetManifest:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for i, row in enumerate(reader):
            try:
                rows.append(
                    ManifestRow(
                        row["patient_id"],
                        row["scan_id"],
                        int(row["slice_index"]),
                        int(row["label"]),
                        row["split"],
                        row["path"],
                    )
                )
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path} row {i + 2}: malformed manifest row") from exc
    return DatasetManifest(rows=rows)


def write_labels(labels: list[CohortLabel], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_HEADER)
        for l in labels:
            writer.writerow([l.patient_id, l.label, l.reason])


def read_labels(path: str) -> list[CohortLabel]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LABELS_HEADER:
            raise DataError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        for row in reader:
            out.append(CohortLabel(row["patient_id"], row["label"], row["reason"]))
    return out
