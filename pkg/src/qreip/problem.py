"""JSON problem and result files.

A problem file mirrors the (c, A, b, cons) calling convention:

    {"version": 1,
     "objective": [c_1, ..., c_k],
     "blocks": [{"type": "orthant" | "psd" | "kl" | "qre" | "sqre",
                 "m" | "n": size,
                 "A": [[...], ...]  or  {"shape": [rows, k], "triplets": [[i, j, v], ...]},
                 "b": [...]}],
     "equalities": {"E": <matrix>, "d": [...]},       (optional)
     "initial_point": [...],                          (optional)
     "meta": {...}}                                   (optional)

Every block constrains b - A x to its domain.  Matrix coordinates use the
column-major vec.  An ``sqre`` block has the qre layout (t, vec X, vec Y)
and means qre(X, Y) + qre(Y, X) <= t; it is expanded into two qre blocks
and a linear row over two extra variables appended to x.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse as sp

from . import __version__
from .cones import ConeBlock, ConeKind, expand_sqre, pad_blocks
from .errors import DimensionMismatch, ParseError, QreError
from .ipm import Model
from .matcalc import mat
from .qre_barrier import qre_value

_DENSE = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_COO = {
    "type": "object",
    "properties": {
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        "triplets": {
            "type": "array",
            "items": {"type": "array", "prefixItems": [{"type": "integer"}, {"type": "integer"}, {"type": "number"}],
                      "minItems": 3, "maxItems": 3},
        },
    },
    "required": ["shape", "triplets"],
    "additionalProperties": False,
}
_MATRIX = {"oneOf": [_DENSE, _COO]}
_VECTOR = {"type": "array", "items": {"type": "number"}}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qreip problem file",
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "objective": _VECTOR,
        "blocks": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "type": {"enum": ["orthant", "psd", "kl", "qre", "sqre"]},
                    "m": {"type": "integer", "minimum": 1},
                    "n": {"type": "integer", "minimum": 1},
                    "A": _MATRIX,
                    "b": _VECTOR,
                    "label": {"type": "string"},
                },
                "required": ["type", "A", "b"],
                "oneOf": [{"required": ["m"]}, {"required": ["n"]}],
            },
        },
        "equalities": {
            "type": "object",
            "properties": {"E": _MATRIX, "d": _VECTOR},
            "required": ["E", "d"],
        },
        "initial_point": _VECTOR,
        "meta": {"type": "object"},
    },
    "required": ["version", "objective", "blocks"],
}

RESULT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qreip result file",
    "type": "object",
    "properties": {
        "status": {"enum": ["Optimal", "MaxIters", "NumericalTrouble"]},
        "objective": {"type": "number"},
        "x": _VECTOR,
        "iterations": {"type": "integer"},
        "newton_steps": {"type": "integer"},
        "mu_final": {"type": "number"},
        "phases": {"type": "object"},
        "wall_seconds": {"type": "number"},
        "version": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
        "message": {"type": "string"},
        "extra": {"type": "object"},
    },
    "required": ["status", "objective", "x", "iterations", "newton_steps", "mu_final", "wall_seconds", "version"],
}


def matrix_to_json(A, dense_limit: float = 0.25):
    """Dense rows when the matrix is mostly filled, COO triplets otherwise."""
    if sp.issparse(A):
        A = A.tocoo()
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.size == 0 or np.count_nonzero(A) > dense_limit * A.size:
            return A.tolist()
        A = sp.coo_matrix(A)
    A.sum_duplicates()
    trip = [[int(i), int(j), float(v)] for i, j, v in zip(A.row, A.col, A.data) if v != 0]
    return {"shape": [int(A.shape[0]), int(A.shape[1])], "triplets": trip}


def matrix_from_json(obj, where="", ncols=None):
    if isinstance(obj, dict):
        r, c = obj["shape"]
        trip = obj["triplets"]
        if not trip:
            return sp.csr_matrix((r, c))
        T = np.asarray(trip, dtype=float)
        i, j = T[:, 0].astype(int), T[:, 1].astype(int)
        if np.any(i < 0) or np.any(i >= r) or np.any(j < 0) or np.any(j >= c):
            raise ParseError("triplet index outside the declared shape", where)
        return sp.coo_matrix((T[:, 2], (i, j)), shape=(r, c)).tocsr()
    if len(obj) == 0:
        return np.zeros((0, ncols or 0))
    lens = {len(row) for row in obj}
    if len(lens) != 1:
        raise ParseError("dense matrix rows have unequal lengths", where)
    return np.asarray(obj, dtype=float)


@dataclass
class BuiltModel:
    model: Model
    k_original: int
    sqre_aux: list = field(default_factory=list)
    initial_point: np.ndarray | None = None

    def trim(self, x):
        return np.asarray(x)[: self.k_original]


def validate_problem(data, source="<problem>"):
    try:
        jsonschema.validate(data, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path)
        raise ParseError(exc.message, f"{source}:/{loc}") from None


def build_model(data: dict, source: str = "<problem>") -> BuiltModel:
    validate_problem(data, source)
    c = np.asarray(data["objective"], dtype=float)
    k = c.shape[0]
    blocks, sqre = [], []
    for j, spec in enumerate(data["blocks"]):
        where = f"{source}:/blocks/{j}"
        A = matrix_from_json(spec["A"], where + "/A", k)
        b = np.asarray(spec["b"], dtype=float)
        if A.shape[1] != k:
            raise ParseError(f"A has {A.shape[1]} columns, objective has {k}", where + "/A")
        kind = spec["type"]
        size = spec.get("m", spec.get("n"))
        label = spec.get("label", f"{kind}[{j}]")
        if kind == "sqre":
            sqre.append((A, b, size, label, where))
            continue
        try:
            blk = ConeBlock(kind, size, A, b, label)
            blk.check_symmetric()
        except QreError as exc:
            raise ParseError(str(exc), where) from None
        blocks.append(blk)
    aux = []
    kk = k
    for A, b, n, label, where in sqre:
        n2 = n * n
        if A.shape[0] != 1 + 2 * n2 or b.shape[0] != 1 + 2 * n2:
            raise ParseError(f"sqre({n}) block needs {1 + 2 * n2} rows", where)
        A = A.toarray() if sp.issparse(A) else A
        A = np.hstack([A, np.zeros((A.shape[0], kk - k))])
        try:
            exp = expand_sqre((A[:1], b[:1]), (A[1 : 1 + n2], b[1 : 1 + n2]), (A[1 + n2 :], b[1 + n2 :]), kk, n)
        except QreError as exc:
            raise ParseError(str(exc), where) from None
        blocks = pad_blocks(blocks, 2) + exp.blocks
        aux.append(exp.aux)
        kk += 2
    c_full = np.concatenate([c, np.zeros(kk - k)])
    eqs = None
    if "equalities" in data:
        E = matrix_from_json(data["equalities"]["E"], f"{source}:/equalities/E", k)
        E = E.toarray() if sp.issparse(E) else E
        d = np.asarray(data["equalities"]["d"], dtype=float)
        if E.shape[1] != k or E.shape[0] != d.shape[0]:
            raise ParseError(f"E is {E.shape}, d has {d.shape[0]} entries, k={k}", f"{source}:/equalities")
        eqs = (np.hstack([E, np.zeros((E.shape[0], kk - k))]), d)
    meta = dict(data.get("meta", {}))
    try:
        model = Model(c_full, blocks, eqs, meta.get("name", ""), meta)
    except DimensionMismatch as exc:
        raise ParseError(str(exc), source) from None
    built = BuiltModel(model, k, aux)
    if "initial_point" in data:
        x0 = np.asarray(data["initial_point"], dtype=float)
        if x0.shape != (k,):
            raise ParseError(f"initial_point has {x0.shape[0]} entries, expected {k}", f"{source}:/initial_point")
        built.initial_point = complete_start(built, x0)
    return built


def complete_start(built: BuiltModel, x0):
    """Append values for the sqre auxiliary variables so every block is interior."""
    x = np.concatenate([np.asarray(x0, dtype=float), np.zeros(built.model.k - built.k_original)])
    for t1, t2 in built.sqre_aux:
        q1 = next(b for b in built.model.blocks if b.kind is ConeKind.QRE and _col(b) == t1)
        q2 = next(b for b in built.model.blocks if b.kind is ConeKind.QRE and _col(b) == t2)
        lin = next(b for b in built.model.blocks if b.kind is ConeKind.ORTHANT and b.label.startswith("sqre:")
                   and _touches(b, t1))
        vals = []
        for q in (q1, q2):
            n = q.size
            z = q.slack(x)
            try:
                vals.append(qre_value(mat(z[1 : 1 + n * n], n), mat(z[1 + n * n :], n)))
            except QreError:
                return x
        x[t1], x[t2] = vals
        gap = float(lin.slack(x)[0])
        x[t1] += gap / 3.0
        x[t2] += gap / 3.0
    return x


def _col(blk):
    A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
    nz = np.flatnonzero(A[0])
    return int(nz[0]) if len(nz) == 1 else -1


def _touches(blk, col):
    A = blk.A.toarray() if sp.issparse(blk.A) else blk.A
    return A[0, col] != 0


def load_problem(path) -> BuiltModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return build_model(data, str(path))


def problem_to_json(c, blocks, equalities=None, initial_point=None, meta=None) -> dict:
    """Serialize raw block specs: each entry is (type, size, A, b[, label])."""
    out = {"version": 1, "objective": [float(v) for v in np.asarray(c, dtype=float)], "blocks": []}
    for spec in blocks:
        kind, size, A, b = spec[:4]
        entry = {"type": kind, ("m" if kind == "orthant" else "n"): int(size),
                 "A": matrix_to_json(A), "b": [float(v) for v in np.asarray(b, dtype=float)]}
        if len(spec) > 4:
            entry["label"] = spec[4]
        out["blocks"].append(entry)
    if equalities is not None:
        E, d = equalities
        out["equalities"] = {"E": matrix_to_json(E), "d": [float(v) for v in d]}
    if initial_point is not None:
        out["initial_point"] = [float(v) for v in initial_point]
    if meta:
        out["meta"] = meta
    return out


@dataclass
class ResultFile:
    status: str
    objective: float
    x: list
    iterations: int
    newton_steps: int
    mu_final: float
    wall_seconds: float
    version: str = __version__
    seed: int | None = None
    phases: dict = field(default_factory=dict)
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, data: dict, source="<result>") -> "ResultFile":
        try:
            jsonschema.validate(data, RESULT_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ParseError(exc.message, source) from None
        return cls(**data)

    @classmethod
    def loads(cls, text: str) -> "ResultFile":
        return cls.from_json(json.loads(text))
