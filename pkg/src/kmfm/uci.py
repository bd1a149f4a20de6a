"""Download, normalize and cache the four UCI benchmark tables.

Each dataset has an ordered list of sources. The first is the UCI archive; later
ones are published wheels on PyPI that vendor the same raw files, pinned by
sha256. Whatever the source, an adapter rewrites the raw file into one headed
CSV with a ``label`` column, stored as ``<cache_dir>/<name>/raw.csv`` next to a
``meta`` JSON file.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from filelock import FileLock

from .dataset import MixedDataset, infer_schema, load_csv
from .errors import ConfigError, IntegrityError, NetworkError

log = logging.getLogger(__name__)

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
ORANGE_WHEEL = (
    "https://files.pythonhosted.org/packages/4c/40/"
    "258c24c83149eb1d4d08ab2a375170666f9ad802a06ee85be7ce747df940/"
    "orange3-3.39.0-cp310-cp310-manylinux_2_27_x86_64.manylinux_2_28_x86_64.whl"
)
ORANGE_SHA = "4dcfe3234c6cfea7d4cb5fa6a7d1cb92355d73d778d565c1f5b85178b216a941"
RESPONSIBLY_WHEEL = (
    "https://files.pythonhosted.org/packages/44/64/"
    "72211de680c21fe6cea67da182db965861603d311c67839ab39cc7226780/"
    "responsibly-0.1.2-py3-none-any.whl"
)
RESPONSIBLY_SHA = "38cd0f88de722d2276bc106910588e56feb1037dcf2a526fb0fec510f66d190b"


@dataclass(frozen=True)
class RemoteFile:
    url: str
    member: Optional[str] = None  # path inside a zip/wheel archive
    sha256: Optional[str] = None  # of the downloaded object


@dataclass(frozen=True)
class UciTable:
    name: str
    rows: int
    columns: tuple
    numerical: tuple
    categorical: tuple
    sources: tuple  # (tag, files, adapter) alternatives, tried in order

    @property
    def header(self):
        return list(self.columns) + ["label"]


# --- adapters: raw bytes per file -> list of string rows in `columns` order ---

_HEART_CODES = {
    "sex": {"1": "male", "0": "female"},
    "cp": {"1": "typical ang", "2": "atypical ang", "3": "non-anginal", "4": "asymptomatic"},
    "restecg": {"0": "normal", "1": "ST-T abnormal", "2": "left vent hypertrophy"},
    "slope": {"1": "upsloping", "2": "flat", "3": "downsloping"},
    "thal": {"3": "normal", "6": "fixed defect", "7": "reversable defect"},
}
HEART_COLUMNS = ("age", "sex", "cp", "trestbps", "chol", "fbs", "restecg",
                 "thalach", "exang", "oldpeak", "slope", "ca", "thal")


def _num_token(v: str) -> str:
    v = v.strip()
    if v in ("?", ""):
        return "?"
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def heart_from_uci(blobs):
    rows = []
    for line in blobs[0].decode("utf-8").splitlines():
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 14:
            continue
        rec = dict(zip(HEART_COLUMNS + ("num",), parts))
        for col, codes in _HEART_CODES.items():
            v = rec[col]
            rec[col] = "?" if v == "?" else codes[_num_token(v)]
        for col in ("fbs", "exang"):
            rec[col] = _num_token(rec[col])
        label = "?" if rec["num"] == "?" else str(int(float(rec["num"]) > 0))
        rows.append([rec[c] for c in HEART_COLUMNS] + [label])
    return rows


def heart_from_orange(blobs):
    lines = blobs[0].decode("utf-8").splitlines()[3:]
    rows = []
    for line in lines:
        parts = line.split("\t")
        if len(parts) != 14:
            continue
        parts = [p.strip() or "?" for p in parts]
        rows.append(parts[:13] + [parts[13]])
    return rows


CREDIT_COLUMNS = tuple(f"A{i}" for i in range(1, 16))


def credit_from_uci(blobs):
    rows = []
    for line in blobs[0].decode("utf-8").splitlines():
        parts = [p.strip() for p in line.split(",")]
        if len(parts) == 16:
            rows.append(parts)
    return rows


GERMAN_COLUMNS = (
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status", "other_debtors",
    "residence_since", "property", "age", "other_installment_plans", "housing",
    "existing_credits", "job", "num_dependents", "telephone", "foreign_worker",
)


def german_from_uci(blobs):
    rows = []
    for line in blobs[0].decode("utf-8").splitlines():
        parts = line.split()
        if len(parts) == 21:
            rows.append(parts)
    return rows


ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country",
)


def adult_from_uci(blobs):
    """Concatenate adult.data and adult.test, strip the test file's trailing
    period on labels, and drop any record with a '?' field."""
    rows = []
    for blob in blobs:
        for line in blob.decode("utf-8").splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 15 or "?" in parts:
                continue
            parts[14] = parts[14].rstrip(".")
            rows.append(parts)
    return rows


TABLES = {
    "heart": UciTable(
        name="heart",
        rows=303,
        columns=HEART_COLUMNS,
        numerical=("age", "trestbps", "chol", "thalach", "oldpeak", "ca"),
        categorical=("sex", "cp", "fbs", "restecg", "exang", "slope", "thal"),
        sources=(
            ("uci", (RemoteFile(f"{UCI}/heart-disease/processed.cleveland.data"),), heart_from_uci),
            ("pypi:orange3", (RemoteFile(ORANGE_WHEEL, "Orange/datasets/heart_disease.tab", ORANGE_SHA),),
             heart_from_orange),
        ),
    ),
    "credit": UciTable(
        name="credit",
        rows=690,
        columns=CREDIT_COLUMNS,
        numerical=("A2", "A3", "A8", "A11", "A14", "A15"),
        categorical=("A1", "A4", "A5", "A6", "A7", "A9", "A10", "A12", "A13"),
        sources=(
            ("uci", (RemoteFile(f"{UCI}/credit-screening/crx.data"),), credit_from_uci),
        ),
    ),
    "german": UciTable(
        name="german",
        rows=1000,
        columns=GERMAN_COLUMNS,
        numerical=("duration", "credit_amount", "installment_rate", "residence_since",
                   "age", "existing_credits", "num_dependents"),
        categorical=("checking_status", "credit_history", "purpose", "savings", "employment",
                     "personal_status", "other_debtors", "property", "other_installment_plans",
                     "housing", "job", "telephone", "foreign_worker"),
        sources=(
            ("uci", (RemoteFile(f"{UCI}/statlog/german/german.data"),), german_from_uci),
            ("pypi:responsibly",
             (RemoteFile(RESPONSIBLY_WHEEL, "responsibly/dataset/german/german.data", RESPONSIBLY_SHA),),
             german_from_uci),
        ),
    ),
    "adult": UciTable(
        name="adult",
        rows=45222,
        columns=ADULT_COLUMNS,
        numerical=("age", "fnlwgt", "education_num", "capital_gain", "capital_loss", "hours_per_week"),
        categorical=("workclass", "education", "marital_status", "occupation", "relationship",
                     "race", "sex", "native_country"),
        sources=(
            ("uci", (RemoteFile(f"{UCI}/adult/adult.data"), RemoteFile(f"{UCI}/adult/adult.test")),
             adult_from_uci),
            ("pypi:responsibly",
             (RemoteFile(RESPONSIBLY_WHEEL, "responsibly/dataset/adult/adult.data", RESPONSIBLY_SHA),
              RemoteFile(RESPONSIBLY_WHEEL, "responsibly/dataset/adult/adult.test", RESPONSIBLY_SHA)),
             adult_from_uci),
        ),
    ),
}

DATASET_NAMES = tuple(TABLES)


def default_cache_dir() -> Path:
    return Path(os.environ.get("KMFM_CACHE", Path.home() / ".cache" / "kmfm"))


def _urlopen(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def _download(rf: RemoteFile, cache_dir: Path, opener) -> bytes:
    """Fetch one remote object (reusing a shared download cache for archives)
    and return the bytes of the requested member."""
    blob = None
    store = None
    if rf.sha256:
        store = cache_dir / "_downloads" / rf.url.rsplit("/", 1)[-1]
        if store.exists():
            blob = store.read_bytes()
            if hashlib.sha256(blob).hexdigest() != rf.sha256:
                blob = None
    if blob is None:
        blob = opener(rf.url)
        if rf.sha256 and hashlib.sha256(blob).hexdigest() != rf.sha256:
            raise IntegrityError(f"sha256 mismatch for {rf.url}")
        if store is not None:
            store.parent.mkdir(parents=True, exist_ok=True)
            tmp = store.with_suffix(store.suffix + ".part")
            tmp.write_bytes(blob)
            tmp.replace(store)
    if rf.member:
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            return zf.read(rf.member)
    return blob


def _count_rows(path: Path) -> int:
    with open(path, newline="", encoding="utf-8") as fh:
        return sum(1 for _ in csv.reader(fh)) - 1


def fetch_uci(dataset_name: str, cache_dir=None, opener: Optional[Callable[[str], bytes]] = None) -> Path:
    """Return the path of the normalized ``raw.csv`` for a UCI table.

    A warm cache is returned without touching the network. Otherwise sources are
    tried in order; the first that yields the documented row count is written.
    """
    if dataset_name not in TABLES:
        raise ConfigError(f"unknown dataset {dataset_name!r}; choose from {DATASET_NAMES}")
    table = TABLES[dataset_name]
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    entry = cache_dir / dataset_name
    entry.mkdir(parents=True, exist_ok=True)
    raw, meta = entry / "raw.csv", entry / "meta"
    opener = opener or _urlopen

    with FileLock(str(entry / ".lock")):
        if raw.exists() and meta.exists():
            info = json.loads(meta.read_text())
            if info.get("rows") == table.rows and _count_rows(raw) == table.rows:
                return raw
        errors = []
        for tag, files, adapter in table.sources:
            try:
                blobs = [_download(rf, cache_dir, opener) for rf in files]
            except (OSError, ValueError, zipfile.BadZipFile, KeyError) as exc:
                errors.append(f"{tag}: {exc}")
                log.info("source %s for %s failed: %s", tag, dataset_name, exc)
                continue
            rows = adapter(blobs)
            if len(rows) != table.rows:
                raise IntegrityError(
                    f"{dataset_name} from {tag}: expected {table.rows} rows, got {len(rows)}")
            tmp = entry / "raw.csv.part"
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(table.header)
                w.writerows(rows)
            tmp.replace(raw)
            meta.write_text(json.dumps({
                "dataset": dataset_name,
                "source": tag,
                "urls": [rf.url + (f"#{rf.member}" if rf.member else "") for rf in files],
                "rows": len(rows),
                "sha256": hashlib.sha256(raw.read_bytes()).hexdigest(),
            }, indent=2) + "\n")
            return raw
        raise NetworkError(f"could not fetch {dataset_name}: " + "; ".join(errors))


def load_uci(dataset_name: str, cache_dir=None, missing_policy: str = "drop_row",
             opener=None) -> MixedDataset:
    """Fetch (or reuse) a table and encode it; categorical levels are the sorted observed values."""
    table = TABLES[dataset_name]
    path = fetch_uci(dataset_name, cache_dir, opener=opener)
    schema = infer_schema(path, table.numerical, table.categorical)
    return load_csv(path, schema, missing_policy=missing_policy, label_column="label",
                    name=dataset_name)
