"""File formats: CSV data sets, INI-style configs, atomic writes."""

import configparser
import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, InputNotFound
from .models import Dataset, treatment_coding

REQUIRED_COLUMNS = ("y", "s1", "s2")


def _check_exists(path):
    path = Path(path)
    if not path.exists():
        raise InputNotFound(f"no such file: {path}")
    return path


def atomic_write_text(path, text):
    """Write ``text`` to a temporary file in the same directory, then rename."""
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
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def read_json(path):
    with open(_check_exists(path), encoding="utf-8") as fh:
        return json.load(fh)


def format_rows(header, rows):
    """CSV text for ``rows`` (sequences or dicts keyed by ``header``)."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(h, "") for h in header]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows):
    return atomic_write_text(path, format_rows(header, rows))


def read_table(path):
    """Read a headed CSV into ``{column: list of strings}`` preserving order."""
    path = _check_exists(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                cols[h].append(v.strip())
    return cols


def _numeric(values, name, path):
    try:
        return np.array([float(v) for v in values])
    except ValueError:
        raise InputError(f"{path}: column {name!r} is not numeric") from None


def read_dataset(path, factors=(), covariates=None):
    """Load a data set with columns ``y, s1, s2`` plus covariates.

    Columns listed in ``factors`` are expanded by treatment coding (first
    sorted level as reference); other covariate columns enter as numbers.
    An intercept column is always prepended.  Returns ``(Dataset, frame)``
    where ``frame`` maps column names to raw arrays.
    """
    cols = read_table(path)
    missing = [c for c in REQUIRED_COLUMNS if c not in cols]
    if missing:
        raise InputError(f"{path}: missing required columns {missing}")
    factors = tuple(factors)
    unknown = [f for f in factors if f not in cols]
    if unknown:
        raise ConfigError(f"factor columns {unknown} not in {path}")
    if covariates is None:
        covariates = [c for c in cols if c not in REQUIRED_COLUMNS]
    frame = {}
    for name in cols:
        if name in factors:
            frame[name] = np.array(cols[name])
        else:
            frame[name] = _numeric(cols[name], name, path)
    n = len(frame["y"])
    blocks = [np.ones((n, 1))]
    names = ["intercept"]
    for c in covariates:
        if c in factors:
            vals = frame[c]
            try:
                vals = vals.astype(float)
                if np.all(vals == np.round(vals)):
                    vals = vals.astype(int)
            except ValueError:
                pass
            block, nm = treatment_coding(vals, c)
            blocks.append(block)
            names += nm
        else:
            blocks.append(frame[c][:, None])
            names.append(c)
    X = np.hstack(blocks)
    coords = np.column_stack([frame["s1"], frame["s2"]])
    return Dataset(y=frame["y"], X=X, coords=coords, x_names=tuple(names)), frame


def write_dataset(path, frame, columns=None):
    columns = list(columns or frame.keys())
    n = len(frame[columns[0]])
    rows = ([frame[c][i] for c in columns] for i in range(n))
    return write_csv(path, columns, rows)


# --------------------------------------------------------------------------
# configs


def read_config(path):
    """Parse a flat ``key = value`` file; section headers are optional.

    Keys outside any section land in ``"main"``.  Returns a dict of dicts of
    strings.
    """
    text = _check_exists(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {s: dict(parser[s]) for s in parser.sections() if s != "__top__"}
    top = dict(parser["__top__"])
    if top:
        out["main"] = {**top, **out.get("main", {})}
    return out


def write_config(path, sections):
    parser = configparser.ConfigParser(interpolation=None)
    for name, items in sections.items():
        parser[name] = {k: _config_value(v) for k, v in items.items() if v is not None}
    buf = _io.StringIO()
    parser.write(buf)
    return atomic_write_text(path, buf.getvalue())


def _config_value(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def parse_list(value):
    if value is None or not str(value).strip():
        return []
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_value(value, kind, key="value"):
    """Convert a config string to ``kind`` (``int``, ``float`` or ``bool``)."""
    try:
        if kind is bool:
            low = str(value).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"cannot read {key}={value!r} as {kind.__name__}") from None
