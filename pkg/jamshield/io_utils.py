import base64
import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np

from .config import CSV_PRECISION, LABEL_COLUMNS, TIMESTAMP_COLUMN
from .errors import SchemaError
from .schema import ClassLabel, FeatureManifest, LabeledSample

logger = logging.getLogger(__name__)


def format_value(value: float) -> str:
    """Render a number with the dataset's declared precision."""
    return f"{float(value):.{CSV_PRECISION}g}"


def read_csv(file_path: Path) -> Tuple[List[str], List[Dict[str, str]]]:
    """Read a CSV file and return its header and a list of dictionaries"""
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"Input file not found: {file_path}")

    logger.info(f"Reading CSV file: {file_path}")

    with open(file_path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        header = list(reader.fieldnames or [])

    logger.info(f"Read {len(rows)} rows from {file_path.name}")
    return header, rows


def write_csv(file_path: Path, fieldnames: List[str], rows: Iterable[Dict[str, str]]) -> None:
    """Write data to a CSV file"""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)

    rows = list(rows)
    logger.info(f"Writing CSV file: {file_path} ({len(rows)} rows)")

    with open(file_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)

    logger.info(f"Successfully wrote {file_path.name}")


def dataset_header(manifest: FeatureManifest) -> List[str]:
    return [TIMESTAMP_COLUMN] + manifest.names + LABEL_COLUMNS


def _check_header(header: List[str], manifest: FeatureManifest, file_name: str) -> None:
    expected = dataset_header(manifest)
    if header[:len(expected)] != expected:
        for position, (found, wanted) in enumerate(zip(header, expected)):
            if found != wanted:
                raise SchemaError(
                    f"{file_name}: column {position} is '{found}', expected '{wanted}'"
                )
        raise SchemaError(
            f"{file_name}: expected {len(expected)} leading columns, found {len(header)}"
        )


def _parse_float(text: str, column: str, row_number: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"Row {row_number}: unparseable value {text!r} in column '{column}'")
    if not np.isfinite(value):
        raise SchemaError(f"Row {row_number}: non-finite value in column '{column}'")
    return value


def parse_record(row: Dict[str, str], manifest: FeatureManifest, row_number: int) -> LabeledSample:
    """Turn one CSV row (as read by csv.DictReader) into a validated sample."""
    timestamp = _parse_float(row.get(TIMESTAMP_COLUMN), TIMESTAMP_COLUMN, row_number)
    values = [_parse_float(row.get(name), name, row_number) for name in manifest.names]

    kind = (row.get("kind") or "").strip()
    label = None
    if kind:
        try:
            label = ClassLabel.parse(kind, row.get("variant") or "")
        except SchemaError as e:
            raise SchemaError(f"Row {row_number}: {e}") from e

    return LabeledSample(timestamp=timestamp, values=np.asarray(values), label=label)


def load_dataset(path: Path, manifest: FeatureManifest) -> List[LabeledSample]:
    """Load a dataset CSV whose columns follow the manifest order plus kind/variant."""
    path = Path(path)
    header, rows = read_csv(path)
    if not header:
        raise SchemaError(f"{path.name}: missing header row")
    _check_header(header, manifest, path.name)

    samples = []
    previous = None
    for row_number, row in enumerate(rows, start=2):
        sample = parse_record(row, manifest, row_number)
        if previous is not None and sample.timestamp < previous:
            logger.warning(f"{path.name} row {row_number}: timestamp goes backwards ({sample.timestamp} < {previous})")
        previous = sample.timestamp
        samples.append(sample)

    logger.info(f"Loaded {len(samples)} samples from {path.name}")
    return samples


def save_dataset(
    path: Path,
    samples: Sequence[LabeledSample],
    manifest: FeatureManifest,
    extra_columns: Optional[Dict[str, Sequence[str]]] = None,
) -> None:
    """Write samples in the dataset CSV format; extra columns go after `variant`."""
    extra_columns = extra_columns or {}
    for name, column in extra_columns.items():
        if len(column) != len(samples):
            raise SchemaError(f"Extra column '{name}' has {len(column)} entries for {len(samples)} samples")

    fieldnames = dataset_header(manifest) + list(extra_columns)
    names = manifest.names

    def rows() -> Iterator[Dict[str, str]]:
        for i, sample in enumerate(samples):
            if len(sample.values) != len(names):
                raise SchemaError(f"Sample {i} has {len(sample.values)} values, manifest has {len(names)}")
            row = {TIMESTAMP_COLUMN: format_value(sample.timestamp)}
            row.update({name: format_value(v) for name, v in zip(names, sample.values)})
            row["kind"] = sample.label.kind if sample.label else ""
            row["variant"] = (sample.label.variant or "") if sample.label else ""
            for column, values in extra_columns.items():
                row[column] = values[i]
            yield row

    write_csv(path, fieldnames, rows())


def read_pseudo_labels(path: Path) -> Optional[np.ndarray]:
    """The `pseudo_label` column of a labeled CSV, or None when absent."""
    header, rows = read_csv(path)
    if "pseudo_label" not in header:
        return None
    try:
        return np.asarray([int(row["pseudo_label"]) for row in rows], dtype=int)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{Path(path).name}: bad pseudo_label value: {e}") from e


def parse_stream_line(line: str, manifest: FeatureManifest, line_number: int) -> LabeledSample:
    """Parse one newline-delimited record `timestamp,<values>[,kind,variant]`."""
    fields = next(csv.reader([line.strip()]))
    width = len(manifest) + 1
    if len(fields) not in (width, width + 1, width + 2):
        raise SchemaError(
            f"Line {line_number}: expected {width} or {width + 2} fields, found {len(fields)}"
        )
    row = {TIMESTAMP_COLUMN: fields[0]}
    row.update(dict(zip(manifest.names, fields[1:width])))
    row["kind"] = fields[width] if len(fields) > width else ""
    row["variant"] = fields[width + 1] if len(fields) > width + 1 else ""
    return parse_record(row, manifest, line_number)


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(canonical_json(payload))
    logger.info(f"Successfully wrote {path.name}")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_array(array: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(array, dtype='<f8').tobytes()).hexdigest()


def encode_array(array: np.ndarray) -> Dict[str, object]:
    """Binary payload for a weight matrix: little-endian float64, row-major, shape in the header."""
    array = np.ascontiguousarray(array, dtype='<f8')
    return {
        "dtype": "<f8",
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes(order='C')).decode("ascii"),
    }


def decode_array(payload: Dict[str, object]) -> np.ndarray:
    if payload.get("dtype") != "<f8":
        raise SchemaError(f"Unsupported array dtype: {payload.get('dtype')}")
    raw = base64.b64decode(payload["data"])
    shape = tuple(int(n) for n in payload["shape"])
    array = np.frombuffer(raw, dtype='<f8').astype(float)
    if array.size != int(np.prod(shape, dtype=int)):
        raise SchemaError(f"Array payload size {array.size} does not match shape {shape}")
    return array.reshape(shape)
