"""Binary PLY reader/writer for 3DGS checkpoints and the covariance codec.

The on-disk layout is the one the reference 3DGS exporter writes: one
``vertex`` element with 62 float32 properties

    x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3

Scales are stored as logs, rotations as w-first quaternions and opacity
as a pre-sigmoid logit.
"""

from __future__ import annotations

import io
from typing import BinaryIO, Union

import numpy as np

from .mixture import SH_REST_COUNT, Appearance, GaussianMixture

PROPERTY_NAMES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(SH_REST_COUNT)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
SPLAT_DTYPE = np.dtype([(name, "<f4") for name in PROPERTY_NAMES])

OPACITY_CLAMP = 1e-6
EIG_FLOOR = 1e-12
NOT_PSD_TOL = 1e-6

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ValueError):
    """Input file does not match the expected layout."""


class PlyFormatError(FormatError):
    pass


class NotPSDError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from w-first quaternions, shape ``(..., 4) -> (..., 3, 3)``."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise ValueError("zero quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """w-first unit quaternions with ``w >= 0`` from proper rotations.

    Branches on the largest of (trace, diagonal) to stay well conditioned.
    """
    r = np.asarray(r, dtype=np.float64)
    batch = r.shape[:-2]
    r = r.reshape(-1, 3, 3)
    q = np.empty((r.shape[0], 4))
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    tr = m00 + m11 + m22
    choice = np.argmax(np.stack([tr, m00, m11, m22], axis=1), axis=1)

    k = choice == 0
    s = np.sqrt(1.0 + tr[k]) * 2
    q[k] = np.stack([0.25 * s, (r[k, 2, 1] - r[k, 1, 2]) / s,
                     (r[k, 0, 2] - r[k, 2, 0]) / s, (r[k, 1, 0] - r[k, 0, 1]) / s], axis=1)
    k = choice == 1
    s = np.sqrt(1.0 + m00[k] - m11[k] - m22[k]) * 2
    q[k] = np.stack([(r[k, 2, 1] - r[k, 1, 2]) / s, 0.25 * s,
                     (r[k, 0, 1] + r[k, 1, 0]) / s, (r[k, 0, 2] + r[k, 2, 0]) / s], axis=1)
    k = choice == 2
    s = np.sqrt(1.0 + m11[k] - m00[k] - m22[k]) * 2
    q[k] = np.stack([(r[k, 0, 2] - r[k, 2, 0]) / s, (r[k, 0, 1] + r[k, 1, 0]) / s,
                     0.25 * s, (r[k, 1, 2] + r[k, 2, 1]) / s], axis=1)
    k = choice == 3
    s = np.sqrt(1.0 + m22[k] - m00[k] - m11[k]) * 2
    q[k] = np.stack([(r[k, 1, 0] - r[k, 0, 1]) / s, (r[k, 0, 2] + r[k, 2, 0]) / s,
                     (r[k, 1, 2] + r[k, 2, 1]) / s, 0.25 * s], axis=1)

    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q.reshape(batch + (4,))


def decode_covariance(log_scale, quaternion) -> np.ndarray:
    """``R diag(exp(2 s)) R^T``; works on single records or stacks."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    r = quaternion_to_rotation(quaternion)
    var = np.exp(2.0 * log_scale)
    return np.einsum("...ij,...j,...kj->...ik", r, var, r)


def encode_covariance(cov) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`decode_covariance`: ``(log_scale, quaternion)``.

    Eigenvalues come out sorted descending.  Each is floored at
    ``1e-12 * max(lambda_max, 1e-12)`` before the log, so flat or
    needle-like barycenters still encode to finite scales.
    """
    cov = np.asarray(cov, dtype=np.float64)
    single = cov.ndim == 2
    cov = cov.reshape(-1, 3, 3)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    lam, vec = np.linalg.eigh(cov)
    lam, vec = lam[:, ::-1], vec[:, :, ::-1]
    top = lam[:, 0]
    bad = lam[:, -1] < -NOT_PSD_TOL * np.abs(top)
    if bad.any():
        i = int(np.argmax(bad))
        raise NotPSDError(f"covariance {i} is not PSD (smallest eigenvalue {lam[i, -1]:.3g})")
    floor = EIG_FLOOR * np.maximum(top, EIG_FLOOR)
    lam = np.maximum(lam, floor[:, None])
    vec = vec.copy()
    flip = np.linalg.det(vec) < 0
    vec[flip, :, 2] *= -1
    log_scale = 0.5 * np.log(lam)
    quat = rotation_to_quaternion(vec)
    if single:
        return log_scale[0], quat[0]
    return log_scale, quat


def _parse_header(stream: BinaryIO):
    first = stream.readline()
    if first.strip() != b"ply":
        raise PlyFormatError("not a PLY file")
    fmt = None
    elements = []
    while True:
        line = stream.readline()
        if not line:
            raise PlyFormatError("unexpected end of stream in header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyFormatError("property before any element")
            if tokens[1] == "list":
                raise PlyFormatError(f"list property {tokens[-1]} is not supported")
            if tokens[1] not in _PLY_TYPES:
                raise PlyFormatError(f"unknown property type {tokens[1]}")
            elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt == "ascii":
        raise PlyFormatError("unsupported encoding: ascii")
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported encoding: {fmt}")
    if len(elements) != 1 or elements[0][0] != "vertex":
        raise PlyFormatError("schema mismatch: expected a single vertex element")
    return elements[0]


def read_records(stream: Union[BinaryIO, bytes]) -> np.ndarray:
    """Raw vertex records as a structured array in :data:`SPLAT_DTYPE` order."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    _, count, props = _parse_header(stream)
    names = [p[0] for p in props]
    for required in PROPERTY_NAMES:
        if required not in names:
            raise PlyFormatError(f"schema mismatch: missing property {required}")
    file_dtype = np.dtype([(name, "<" + t) for name, t in props])
    nbytes = count * file_dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) < nbytes:
        raise PlyFormatError("unexpected end of stream")
    raw = np.frombuffer(payload, dtype=file_dtype, count=count)
    out = np.empty(count, dtype=SPLAT_DTYPE)
    for name in PROPERTY_NAMES:
        out[name] = raw[name]
    return out


def _column(records: np.ndarray, names) -> np.ndarray:
    return np.stack([records[n].astype(np.float64) for n in names], axis=1)


def records_to_mixture(records: np.ndarray) -> GaussianMixture:
    means = _column(records, ["x", "y", "z"])
    log_scale = _column(records, [f"scale_{i}" for i in range(3)])
    quat = _column(records, [f"rot_{i}" for i in range(4)])
    opacity = records["opacity"].astype(np.float64)
    everything = np.stack([records[n].astype(np.float64) for n in PROPERTY_NAMES], axis=1)
    bad = ~np.isfinite(everything).all(axis=1)
    if bad.any():
        raise PlyFormatError(f"splat {int(np.argmax(bad))} has non-finite fields")
    qn = np.linalg.norm(quat, axis=1)
    if (qn <= 1e-12).any():
        raise PlyFormatError(f"splat {int(np.argmax(qn <= 1e-12))} has a zero quaternion")
    app = Appearance(
        opacity,
        _column(records, [f"f_dc_{i}" for i in range(3)]),
        _column(records, [f"f_rest_{i}" for i in range(SH_REST_COUNT)]),
        _column(records, ["nx", "ny", "nz"]),
    )
    covs = decode_covariance(log_scale, quat) if len(records) else np.zeros((0, 3, 3))
    weights = sigmoid(opacity)
    # sigmoid saturates to exactly 0 for very negative logits
    weights = np.maximum(weights, np.finfo(np.float64).tiny)
    # decoded covariances are PSD by construction
    return GaussianMixture(means, covs, weights, app, validate=False)


def read_splats(stream: Union[BinaryIO, bytes]) -> GaussianMixture:
    return records_to_mixture(read_records(stream))


def mixture_to_records(mixture: GaussianMixture) -> np.ndarray:
    if mixture.dim != 3:
        raise ValueError(f"splat files are 3-d, mixture has dim {mixture.dim}")
    app = mixture.appearance
    if app is None:
        raise ValueError("component 0 has no appearance payload")
    n = len(mixture)
    rec = np.zeros(n, dtype=SPLAT_DTYPE)
    if n == 0:
        return rec
    log_scale, quat = encode_covariance(mixture.covariances)
    # clamping opacity to [eps, 1 - eps] is clamping the logit symmetrically;
    # doing it on the logit keeps in-range values bit-exact
    limit = float(logit(1 - OPACITY_CLAMP))
    opacity = np.clip(app.opacity_logit, -limit, limit)
    cols = {
        "x": mixture.means[:, 0], "y": mixture.means[:, 1], "z": mixture.means[:, 2],
        "nx": app.normal[:, 0], "ny": app.normal[:, 1], "nz": app.normal[:, 2],
        "opacity": opacity,
    }
    for i in range(3):
        cols[f"f_dc_{i}"] = app.sh_dc[:, i]
        cols[f"scale_{i}"] = log_scale[:, i]
    for i in range(SH_REST_COUNT):
        cols[f"f_rest_{i}"] = app.sh_rest[:, i]
    for i in range(4):
        cols[f"rot_{i}"] = quat[:, i]
    for name, values in cols.items():
        rec[name] = values
    return rec


def write_records(records: np.ndarray, stream: BinaryIO) -> None:
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(records)}"]
    header += [f"property float {name}" for name in PROPERTY_NAMES]
    header.append("end_header")
    stream.write(("\n".join(header) + "\n").encode("ascii"))
    stream.write(np.ascontiguousarray(records, dtype=SPLAT_DTYPE).tobytes())


def write_splats(mixture: GaussianMixture, stream: BinaryIO = None) -> bytes:
    """Serialize; returns the bytes and also writes them to ``stream`` if given."""
    try:
        records = mixture_to_records(mixture)
    except NotPSDError as exc:
        raise NotPSDError(f"cannot encode covariance: {exc}") from exc
    buf = io.BytesIO()
    write_records(records, buf)
    data = buf.getvalue()
    if stream is not None:
        stream.write(data)
    return data


def load_ply(path) -> GaussianMixture:
    with open(path, "rb") as fh:
        return read_splats(fh)


def save_ply(mixture: GaussianMixture, path) -> None:
    data = write_splats(mixture)
    with open(path, "wb") as fh:
        fh.write(data)


# Plain-text sidecar for mixtures without a splat schema (2-d synthetics).
# One header row, then one component per row:
#   weight, mean_0..mean_{d-1}, cov_00, cov_01, ..., cov_{d-1}{d-1}

def csv_header(dim: int) -> list[str]:
    return (["weight"] + [f"mean_{i}" for i in range(dim)]
            + [f"cov_{i}{j}" for i in range(dim) for j in range(dim)])


def write_mixture_csv(mixture: GaussianMixture) -> str:
    d = mixture.dim
    lines = [",".join(csv_header(d))]
    rows = np.concatenate([mixture.weights[:, None], mixture.means,
                           mixture.covariances.reshape(len(mixture), d * d)], axis=1)
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def read_mixture_csv(text: str) -> GaussianMixture:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty mixture file")
    names = [c.strip() for c in lines[0].split(",")]
    dim = sum(1 for c in names if c.startswith("mean_"))
    if dim not in (1, 2, 3) or names != csv_header(dim):
        raise FormatError("schema mismatch: unexpected CSV header")
    try:
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"malformed CSV row: {exc}") from exc
    if len(rows) == 0:
        return GaussianMixture.empty(dim)
    if rows.shape[1] != len(names):
        raise FormatError("malformed CSV row: wrong column count")
    return GaussianMixture(rows[:, 1:1 + dim], rows[:, 1 + dim:].reshape(-1, dim, dim), rows[:, 0])


def load_mixture(path) -> GaussianMixture:
    """Read a ``.ply`` splat file or a ``.csv`` sidecar, by extension."""
    path = str(path)
    if path.lower().endswith(".csv"):
        with open(path, "r", encoding="ascii") as fh:
            return read_mixture_csv(fh.read())
    return load_ply(path)


def save_mixture(mixture: GaussianMixture, path) -> None:
    path = str(path)
    if path.lower().endswith(".csv"):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(write_mixture_csv(mixture))
    else:
        save_ply(mixture, path)
