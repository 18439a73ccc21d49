"""Image readers/writers and the versioned CSV formats written by the harness."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, VersionError
from .proportionality import ShareCurve, ShareCurves

TENSOR_MAGIC = b"attrcrit-tensor"
TENSOR_VERSION = 1
METRICS_SCHEMA = "# attrcrit-metrics v1"
SUMMARY_SCHEMA = "# attrcrit-summary v1"
WINNERS_SCHEMA = "# attrcrit-winners v1"
CURVE_SCHEMA = "# attrcrit-curve v1"
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".rawt")


# -- images --------------------------------------------------------------


def _pnm_header(data: bytes):
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("PNM header must end with a single whitespace byte")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"non-numeric PNM header fields {tokens!r}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PNM dimensions {width}x{height} maxval {maxval}")
    return width, height, maxval, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read a binary P5 (grey) or P6 (RGB) file as C x H x W in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    width, height, maxval, offset = _pnm_header(data)
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    payload = data[offset : offset + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(f"{path}: expected {count * dtype.itemsize} payload bytes, found {len(payload)}")
    px = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    return np.ascontiguousarray(px.reshape(height, width, channels).transpose(2, 0, 1))


def write_pnm(path, image, maxval: int = 255) -> None:
    """Write a C x H x W array in [0, 1] as P5 (C=1) or P6 (C=3)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError(f"PNM needs 1 or 3 channels, got {image.shape}")
    c, h, w = image.shape
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval).transpose(1, 2, 0)
    dtype = ">u2" if maxval > 255 else "u1"
    magic = b"P5" if c == 1 else b"P6"
    Path(path).write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + q.astype(dtype).tobytes())


def write_raw_tensor(path, array) -> None:
    """Header line, JSON metadata line, then little-endian float32 values."""
    array = np.asarray(array)
    meta = {"version": TENSOR_VERSION, "shape": list(array.shape), "dtype": "<f4"}
    Path(path).write_bytes(TENSOR_MAGIC + b"\n" + json.dumps(meta).encode() + b"\n" + array.astype("<f4").tobytes())


def read_raw_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 2)
    if len(parts) != 3 or parts[0] != TENSOR_MAGIC:
        raise FormatError(f"{path}: missing raw-tensor header")
    try:
        meta = json.loads(parts[1])
        shape = tuple(int(s) for s in meta["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed raw-tensor metadata ({exc})") from exc
    if meta.get("version") != TENSOR_VERSION:
        raise VersionError(f"{path}: unsupported raw-tensor version {meta.get('version')!r}")
    if meta.get("dtype", "<f4") != "<f4":
        raise FormatError(f"{path}: unsupported dtype {meta['dtype']!r}")
    count = int(np.prod(shape))
    if len(parts[2]) != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} payload bytes, found {len(parts[2])}")
    arr = np.frombuffer(parts[2], dtype="<f4").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return arr


def load_image(path, expected_shape=None) -> np.ndarray:
    """Load a PNM or raw-tensor image as a float64 C x H x W array.

    PNM values are scaled to [0, 1]; raw tensors are returned as stored.
    No resizing: a shape mismatch raises ShapeError.
    """
    path = Path(path)
    if path.suffix.lower() == ".rawt":
        img = read_raw_tensor(path)
    else:
        img = read_pnm(path)
    if expected_shape is not None and tuple(img.shape) != tuple(expected_shape):
        raise ShapeError(f"{path.name}: shape {img.shape} but model expects {tuple(expected_shape)}")
    return img


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- CSV helpers ---------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, schema: str, header, rows) -> None:
    buf = io.StringIO()
    buf.write(schema + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path, schema: str) -> list[dict[str, str]]:
    """Parse a harness CSV, rejecting a missing or different schema line."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing schema line")
    first = lines[0].split(";")[0].strip()
    kind, _, version = first.rpartition(" ")
    expected_kind, _, expected_version = schema.rpartition(" ")
    if kind != expected_kind:
        raise FormatError(f"{path}: expected {expected_kind!r}, found {kind!r}")
    if version != expected_version:
        raise VersionError(f"{path}: unsupported schema version {version!r}")
    return list(csv.DictReader(lines[1:]))


# -- curve export ----------------------------------------------------------

_CURVE_KEYS = (
    ("necessity", "forward", "necessity_fwd"),
    ("necessity", "reversed", "necessity_rev"),
    ("sufficiency", "forward", "sufficiency_fwd"),
    ("sufficiency", "reversed", "sufficiency_rev"),
)


def write_share_curve(path, curve: ShareCurve) -> None:
    write_csv(path, CURVE_SCHEMA, ["orientation", "k", "R"], ((curve.orientation, k, r) for k, r in curve.knots))


def read_share_curve(path, direction: str = "") -> ShareCurve:
    rows = read_csv(path, CURVE_SCHEMA)
    if not rows:
        raise FormatError(f"{path}: empty curve")
    return ShareCurve(
        [float(r["k"]) for r in rows], [float(r["R"]) for r in rows], direction, rows[0]["orientation"]
    )


def write_perturbation_curve(path, curve) -> None:
    """``m, k, R`` rows of a :class:`~attrcrit.ordering.PerturbationCurve`."""
    write_csv(path, CURVE_SCHEMA, ["m", "k", "R"], curve.points)


def export_curves(image_id: str, method: str, curves: ShareCurves | None, output_dir, *, svg: bool = False):
    """Write the four share curves plus a plot-ready file per criterion.

    Returns the written paths; nothing is written when ``curves`` is None
    (an image whose map had no positive pixel).
    """
    if curves is None:
        return []
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{image_id}__{method}"
    paths = []
    for criterion, orientation, attr in _CURVE_KEYS:
        p = out / f"{stem}__{criterion}_{orientation}.csv"
        write_share_curve(p, getattr(curves, attr))
        paths.append(p)
    rows = []
    for criterion in ("necessity", "sufficiency"):
        fwd = getattr(curves, f"{criterion}_fwd")
        rev = getattr(curves, f"{criterion}_rev")
        for k in np.union1d(fwd.k, rev.k):
            rows.append((criterion, float(k), float(fwd(k)), float(rev(k))))
    p = out / f"{stem}__areas.csv"
    write_csv(p, CURVE_SCHEMA, ["criterion", "k", "R_forward", "R_reversed"], rows)
    paths.append(p)
    if svg:
        paths.append(render_areas_svg(out / f"{stem}__areas.svg", curves, title=f"{image_id} / {method}"))
    return paths


def render_areas_svg(path, curves: ShareCurves, title: str = ""):
    """Two-panel chart shading the area between forward and reversed curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
    for ax, criterion in zip(axes, ("necessity", "sufficiency")):
        fwd = getattr(curves, f"{criterion}_fwd")
        rev = getattr(curves, f"{criterion}_rev")
        k = np.union1d(fwd.k, rev.k)
        ax.plot(k, fwd(k), label="highest first")
        ax.plot(k, rev(k), label="lowest first")
        ax.fill_between(k, fwd(k), rev(k), alpha=0.3)
        ax.set_xlabel("attribution share k")
        ax.set_title(criterion)
    axes[0].set_ylabel("class score")
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
