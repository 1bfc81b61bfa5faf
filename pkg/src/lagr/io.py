"""CSV and JSON ingestion and emission.

All floats are written with 17 significant digits so that files round-trip
exactly through :func:`load_dataset`.
"""
import configparser
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .design import Dataset
from .errors import ConfigurationError, InputError, ParseError, SchemaError

FORMAT_VERSION = 1
SURFACE_COLUMNS = ("u", "v", "coefficient", "estimate", "gradient_u", "gradient_v", "active", "lambda",
                   "df_hat", "converged")
PATH_COLUMNS = ("location", "u", "v", "lambda", "df_hat", "deviance", "aic", "selected")
STUDY_COLUMNS = ("n", "rho", "sigma_eps", "method", "coefficient", "mise", "zero_freq")
REPLICATE_COLUMNS = ("n", "rho", "sigma_eps", "method", "replicate", "coefficient", "mise", "zero_freq", "failures")
PREDICTION_COLUMNS = ("u", "v", "prediction", "converged")
BUNDLED = {"@boston": "boston_corrected.csv"}


@dataclass(frozen=True)
class DatasetSchema:
    x_col: str
    y_col: str
    response_col: str
    covariate_cols: tuple

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        if not self.covariate_cols:
            raise ConfigurationError("at least one covariate column is required")


BOSTON_SCHEMA = DatasetSchema("LON", "LAT", "MEDV", ("CRIM", "RM", "RAD", "TAX", "LSTAT"))


def fmt(v):
    """17-significant-digit float text; integers and flags pass through."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def resolve_input(path):
    """Map ``@name`` to a bundled data file; other paths pass through."""
    if path in BUNDLED:
        return str(resources.files("lagr") / "data" / BUNDLED[path])
    return path


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def load_dataset(path, schema=BOSTON_SCHEMA):
    """Read a header-row CSV into a :class:`~lagr.design.Dataset` with an intercept prepended."""
    path = resolve_input(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError("cannot read %s: %s" % (path, exc)) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("%s is empty (a header row is required)" % path) from None
        header = [h.strip() for h in header]
        wanted = [schema.x_col, schema.y_col, schema.response_col] + list(schema.covariate_cols)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError("%s is missing column(s) %s" % (path, ", ".join(missing)))
        idx = [header.index(c) for c in wanted]
        data = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for c, k in zip(wanted, idx):
                cell = row[k].strip() if k < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError("%s row %d, column %s: cannot parse %r as a number" % (path, lineno, c, cell)) from None
                if not math.isfinite(v):
                    raise ParseError("%s row %d, column %s: non-finite value %r" % (path, lineno, c, cell))
                vals.append(v)
            data.append(vals)
    if not data:
        raise SchemaError("%s has a header but no data rows" % path)
    A = np.array(data)
    return Dataset.from_arrays(A[:, :2], A[:, 3:], A[:, 2], schema.covariate_cols)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_dataset(path, dataset, schema=None):
    """Write a dataset in the form :func:`load_dataset` reads; the intercept column is omitted."""
    start = 1 if dataset.intercept_included else 0
    names = dataset.covariate_names[start:]
    schema = schema or DatasetSchema("u", "v", "y", names)
    cols = (schema.x_col, schema.y_col, schema.response_col) + tuple(schema.covariate_cols)
    rows = (
        [dataset.locations[i, 0], dataset.locations[i, 1], dataset.y[i]] + list(dataset.X[i, start:])
        for i in range(dataset.n)
    )
    write_csv(path, cols, rows)
    return schema


def surface_rows(surface):
    """SurfaceRecord rows; failed locations are omitted (they are listed in the manifest)."""
    p = surface.p
    failed = {f[0] for f in surface.failures}
    for i in range(surface.locations.shape[0]):
        if i in failed:
            continue
        u, v = surface.locations[i]
        for j, name in enumerate(surface.names):
            est, gu, gv = surface.zeta[i, j], surface.zeta[i, p + j], surface.zeta[i, 2 * p + j]
            active = not (est == 0.0 and gu == 0.0 and gv == 0.0)
            yield (u, v, name, est, gu, gv, active, surface.lam[i], surface.df[i], bool(surface.converged[i]))


def write_surface(path, surface):
    write_csv(path, SURFACE_COLUMNS, surface_rows(surface))


def write_tuning_path(path, surface):
    def rows():
        for i in range(surface.locations.shape[0]):
            rec = surface.paths[i] if surface.paths else None
            if not rec:
                continue
            u, v = surface.locations[i]
            for lam, df, dev, a in rec:
                yield (i, u, v, lam, df, dev, a, lam == surface.lam[i])

    write_csv(path, PATH_COLUMNS, rows())


def write_study(path, reports):
    write_csv(path, STUDY_COLUMNS, ([r[c] for c in STUDY_COLUMNS] for rep in reports for r in rep.rows()))


def write_study_replicates(path, reports):
    def rows():
        for rep in reports:
            s = rep.spec
            for r in rep.per_replicate:
                for j in range(len(r["mise"])):
                    yield (s.subsample_n, s.rho, s.sigma_eps, rep.method, r["replicate"], "beta%d" % (j + 1),
                           r["mise"][j], r["zero_freq"][j], len(r["failures"]))

    write_csv(path, REPLICATE_COLUMNS, rows())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise InputError("cannot read JSON from %s: %s" % (path, exc)) from exc


def _floats(text, field):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError("scenario field %r: %r is not a comma-separated list of numbers" % (field, text)) from None


def read_scenario_file(path):
    """Parse a key-value ``[study]`` section into settings and study options.

    Keys: ``n``, ``rho``, ``sigma_eps`` (comma lists; the cross product
    defines the settings), ``replicates``, ``seed``, ``methods``, ``gamma``,
    ``truth_covariance``.
    """
    from .simulation import ScenarioSpec

    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError("cannot read scenario file %s: %s" % (path, exc)) from exc
    if "study" not in cp:
        raise ConfigurationError("scenario file %s needs a [study] section" % path)
    sec = cp["study"]
    known = {"n", "rho", "sigma_eps", "replicates", "seed", "methods", "gamma", "truth_covariance"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigurationError("unknown scenario field(s): %s" % ", ".join(sorted(unknown)))
    ns = [int(v) for v in _floats(sec.get("n", "400,200,100"), "n")]
    rhos = _floats(sec.get("rho", "0,0.5,0.9"), "rho")
    sigmas = _floats(sec.get("sigma_eps", "0.5,1.0"), "sigma_eps")
    try:
        reps = sec.getint("replicates", 5)
        seed = sec.getint("seed", 1)
        gamma = sec.getfloat("gamma", 2.0)
    except ValueError as exc:
        raise ConfigurationError("scenario field: %s" % exc) from exc
    methods = [m.strip().upper() for m in sec.get("methods", "LAGR,VCR").split(",") if m.strip()]
    truth = sec.get("truth_covariance", "exponential").strip()
    for field, vals in (("n", ns), ("rho", rhos), ("sigma_eps", sigmas), ("methods", methods)):
        if not vals:
            raise ConfigurationError("scenario field %r lists no values; the settings list would be empty" % field)
    settings = []
    for sig in sigmas:
        for rho in rhos:
            for n in ns:
                try:
                    settings.append(ScenarioSpec(n, rho, sig, reps, seed, truth))
                except ConfigurationError as exc:
                    raise ConfigurationError("scenario (n=%s, rho=%s, sigma_eps=%s): %s" % (n, rho, sig, exc)) from exc
    options = {"n": ns, "rho": rhos, "sigma_eps": sigmas, "replicates": reps, "seed": seed, "methods": methods,
               "gamma": gamma, "truth_covariance": truth}
    return settings, options


def read_points(path):
    """Evaluation points from a CSV with ``u`` and ``v`` columns (extra columns are kept by name)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError("cannot read %s: %s" % (path, exc)) from exc
    with fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        for c in ("u", "v"):
            if c not in cols:
                raise SchemaError("%s is missing column %s" % (path, c))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items() if k is not None}
            try:
                rows.append({k: float(v) for k, v in row.items()})
            except (TypeError, ValueError):
                raise ParseError("%s row %d: non-numeric value" % (path, lineno)) from None
    if not rows:
        raise SchemaError("%s has no data rows" % path)
    return rows


def default_output_dir():
    return os.environ.get("LAGR_OUTPUT_DIR", "lagr-output")
