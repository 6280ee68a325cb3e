"""Atomic CSV/JSON output and sample-file input."""
import csv
import io
import json
import os
import tempfile

import numpy as np

from . import __version__

METRIC_COLUMNS = ("k", "metric", "p", "method", "value", "se", "n", "baseline_value")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def atomic_write_text(path, text):
    """Write through a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_metric_csv(path, records):
    """``records`` are dicts keyed by METRIC_COLUMNS (missing keys left empty)."""
    write_csv(path, METRIC_COLUMNS, ([r.get(c) for c in METRIC_COLUMNS] for r in records))


def write_snapshot_csv(path, ensemble):
    """One row per (checkpoint, trajectory): k, traj, x components, y components."""
    d = ensemble.x.shape[2]
    header = ["k", "traj"] + [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)]
    Y = ensemble.y

    def rows():
        for c, k in enumerate(ensemble.checkpoints):
            for t in range(ensemble.n_traj):
                yield [int(k), t, *ensemble.x[c, t], *Y[c, t]]
    write_csv(path, header, rows())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, payload):
    atomic_write_text(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def manifest(config, extra=None):
    body = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "experiment": config.experiment,
        "provenance": f"sa_lab {__version__} config:{config.config_hash()}",
    }
    if extra:
        body.update(extra)
    return body


def read_samples_csv(path):
    """Header ``x0,x1,...`` then one sample per line."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or any(h.strip() != f"x{i}" for i, h in enumerate(header)):
            raise ValueError(f"{path}: header must be x0,x1,..., got {header}")
        rows = [[float(v) for v in r] for r in reader if r]
    X = np.array(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(header):
        raise ValueError(f"{path}: ragged sample rows")
    return X
