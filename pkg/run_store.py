"""
Run Store Module for spde-holder

Persistence of runs on the local filesystem: JSON reports, plot-ready CSV tables
and raw float64 fields with JSON headers. Every write is atomic (temp file + rename).
"""

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from utils.errors import MissingEnsembleError, ShapeMismatchError, ValidationError

MANIFEST = 'run.json'
ENSEMBLE = 'ensemble/records.json'
REPORTS_DIR = 'reports'
TABLES_DIR = 'tables'
FIELDS_DIR = 'fields'
PARTIAL_DIR = 'partial'
RAW_DTYPE = '<f8'


# ============================================================================
# LOW-LEVEL WRITES
# ============================================================================

def atomic_write_bytes(path: str, data: bytes) -> None:
    """
    Write data to path through a temporary file in the same directory

    A reader sees either the previous file or the complete new one.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


def dumps(payload: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline"""
    return json.dumps(jsonable(payload), sort_keys=True, indent=2, ensure_ascii=True) + '\n'


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


# ============================================================================
# RUN STORE
# ============================================================================

class RunStore:
    """One run directory"""

    def __init__(self, root: str, provenance: Optional[Dict] = None):
        """
        Args:
            root: Run directory (created on first write)
            provenance: Resolved config and seed embedded into every artifact
        """
        self.root = os.path.abspath(root)
        self.provenance = provenance or {}

    def path(self, *parts: str) -> str:
        full = os.path.abspath(os.path.join(self.root, *parts))
        if os.path.commonpath([full, self.root]) != self.root:
            raise ValidationError(f"Path escapes the run directory: {os.path.join(*parts)}")
        return full

    def exists(self, *parts: str) -> bool:
        return os.path.exists(self.path(*parts))

    # ------------------------------------------------------------------
    # JSON
    # ------------------------------------------------------------------

    def write_json(self, relpath: str, payload: Dict) -> str:
        """Write a JSON document with the run provenance embedded"""
        document = dict(payload)
        document['provenance'] = self.provenance
        target = self.path(relpath)
        atomic_write_bytes(target, dumps(document).encode('utf-8'))
        return target

    def read_json(self, relpath: str) -> Dict:
        target = self.path(relpath)
        with open(target, 'r', encoding='utf-8') as f:
            return json.load(f)

    def write_report(self, name: str, report: Dict) -> str:
        return self.write_json(f"{REPORTS_DIR}/{name}.json", report)

    def read_report(self, name: str) -> Dict:
        return self.read_json(f"{REPORTS_DIR}/{name}.json")

    def save_partial(self, name: str, payload: Dict) -> str:
        return self.write_json(f"{PARTIAL_DIR}/{name}.json", payload)

    # ------------------------------------------------------------------
    # ensemble
    # ------------------------------------------------------------------

    def write_ensemble(self, records: List[Dict]) -> str:
        return self.write_json(ENSEMBLE, {'records': records})

    def read_ensemble(self) -> List[Dict]:
        """Per-sample records written by simulate"""
        if not self.exists(ENSEMBLE):
            raise MissingEnsembleError(f"No ensemble in {self.root}; run simulate first",
                                       {'run': self.root, 'expected': ENSEMBLE})
        return self.read_json(ENSEMBLE)['records']

    # ------------------------------------------------------------------
    # CSV
    # ------------------------------------------------------------------

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        """
        Write a plot-ready table

        The first line is a comment carrying the provenance as compact JSON.
        """
        buffer = io.StringIO()
        buffer.write('# provenance: ' + json.dumps(jsonable(self.provenance), sort_keys=True,
                                                    separators=(',', ':')) + '\n')
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        target = self.path(TABLES_DIR, f"{name}.csv")
        atomic_write_bytes(target, buffer.getvalue().encode('utf-8'))
        return target

    def read_csv(self, name: str) -> str:
        with open(self.path(TABLES_DIR, f"{name}.csv"), 'r', encoding='utf-8') as f:
            return f.read()

    # ------------------------------------------------------------------
    # raw fields
    # ------------------------------------------------------------------

    def write_raw(self, name: str, values: np.ndarray, header: Optional[Dict] = None) -> str:
        """Flat little-endian float64 file plus a JSON header with shape and provenance"""
        values = np.ascontiguousarray(values, dtype=RAW_DTYPE)
        atomic_write_bytes(self.path(FIELDS_DIR, f"{name}.bin"), values.tobytes())
        meta = dict(header or {})
        meta.update({'shape': list(values.shape), 'dtype': RAW_DTYPE, 'order': 'C'})
        return self.write_json(f"{FIELDS_DIR}/{name}.json", meta)

    def read_raw(self, name: str) -> np.ndarray:
        meta = self.read_json(f"{FIELDS_DIR}/{name}.json")
        with open(self.path(FIELDS_DIR, f"{name}.bin"), 'rb') as f:
            data = np.frombuffer(f.read(), dtype=meta['dtype'])
        shape = tuple(meta['shape'])
        if data.size != int(np.prod(shape)):
            raise ShapeMismatchError(f"Raw field {name} has {data.size} values, header says {shape}",
                                     {'name': name, 'shape': list(shape)})
        return data.reshape(shape)

    # ------------------------------------------------------------------
    # listings and digests
    # ------------------------------------------------------------------

    def files(self) -> List[str]:
        """Relative paths of every artifact, sorted (manifest and partial results excluded)"""
        out = []
        if not os.path.isdir(self.root):
            return out
        for base, dirs, names in os.walk(self.root):
            dirs.sort()
            for name in sorted(names):
                rel = os.path.relpath(os.path.join(base, name), self.root).replace(os.sep, '/')
                if rel == MANIFEST or rel.startswith(PARTIAL_DIR + '/') or name.startswith('.tmp-'):
                    continue
                out.append(rel)
        return out

    def digests(self) -> Dict[str, str]:
        return {rel: sha256_file(self.path(rel)) for rel in self.files()}

    def list_reports(self) -> List[str]:
        return [rel[len(REPORTS_DIR) + 1:-5] for rel in self.files()
                if rel.startswith(REPORTS_DIR + '/') and rel.endswith('.json')]

    def list_tables(self) -> List[str]:
        return [rel[len(TABLES_DIR) + 1:-4] for rel in self.files()
                if rel.startswith(TABLES_DIR + '/') and rel.endswith('.csv')]

    def write_manifest(self, commands: Sequence[str] = ()) -> str:
        """run.json: provenance, completed commands and the SHA-256 of every artifact"""
        previous = self.read_json(MANIFEST).get('commands', []) if self.exists(MANIFEST) else []
        done = list(dict.fromkeys(list(previous) + list(commands)))
        return self.write_json(MANIFEST, {'commands': done, 'digests': self.digests()})

    def manifest(self) -> Dict:
        return self.read_json(MANIFEST)


def list_runs(root: str) -> List[str]:
    """Run directories (those holding a manifest) directly under root, sorted"""
    if not os.path.isdir(root):
        return []
    return sorted(name for name in os.listdir(root)
                  if os.path.isfile(os.path.join(root, name, MANIFEST)))
