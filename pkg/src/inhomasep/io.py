"""File formats: trajectory CSV/binary frames, kernel dumps, run manifests.

The binary frame format is little endian throughout: magic b"IASP", u32
version, u64 N, u64 seed, f64 r, f64 ell, u64 frame count, then per frame
one f64 time followed by three f64[N] arrays (Z, h, eta).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .asep import FieldPath

_MAGIC = b"IASP"
_VERSION = 1


def write_path_csv(path: FieldPath, filename) -> None:
    with open(filename, "w") as fh:
        fh.write("t_macro,x_macro,Z,h,eta\n")
        for k, t in enumerate(path.t_macro):
            for j, x in enumerate(path.x_macro):
                h = path.h[k, j] if path.h is not None else ""
                eta = path.eta[k, j] if path.eta is not None else ""
                fh.write(f"{t:.17g},{x:.17g},{path.z[k, j]:.17g},{h},{eta}\n")


def write_path_frames(path: FieldPath, filename) -> None:
    n = path.x_macro.shape[0]
    seed = int(path.meta.get("seed", 0))
    scaling = path.meta.get("scaling", {})
    with open(filename, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQdd", _VERSION, n, seed,
                             float(scaling.get("r", 0.0)),
                             float(scaling.get("ell", 0.0))))
        fh.write(struct.pack("<Q", path.t_macro.shape[0]))
        for k, t in enumerate(path.t_macro):
            fh.write(struct.pack("<d", float(t)))
            fh.write(path.z[k].astype("<f8").tobytes())
            h = path.h[k] if path.h is not None else np.zeros(n)
            eta = path.eta[k] if path.eta is not None else np.zeros(n)
            fh.write(h.astype("<f8").tobytes())
            fh.write(eta.astype("<f8").tobytes())


def read_path_frames(filename) -> FieldPath:
    with open(filename, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a trajectory frame file")
        version, n, seed, r, ell = struct.unpack("<IQQdd", fh.read(36))
        if version != _VERSION:
            raise ValueError(f"unsupported frame version {version}")
        (k,) = struct.unpack("<Q", fh.read(8))
        ts = np.empty(k)
        z = np.empty((k, n))
        h = np.empty((k, n))
        eta = np.empty((k, n))
        for i in range(k):
            (ts[i],) = struct.unpack("<d", fh.read(8))
            z[i] = np.frombuffer(fh.read(8 * n), dtype="<f8")
            h[i] = np.frombuffer(fh.read(8 * n), dtype="<f8")
            eta[i] = np.frombuffer(fh.read(8 * n), dtype="<f8")
    return FieldPath(t_macro=ts, x_macro=np.arange(n) / n, z=z, h=h, eta=eta,
                     meta={"seed": seed, "scaling": {"r": r, "ell": ell}, "n": n})


def write_kernel_csv(t: float, kernel: np.ndarray, filename) -> None:
    with open(filename, "w") as fh:
        fh.write("t,x,x_end,value\n")
        n = kernel.shape[0]
        for x in range(n):
            for xt in range(kernel.shape[1]):
                fh.write(f"{t:.17g},{x},{xt},{kernel[x, xt]:.17g}\n")


def write_bounds_csv(reports, filename) -> None:
    with open(filename, "w") as fh:
        fh.write("bound_id,N,measured_lambda\n")
        for rep in reports:
            fh.write(f"{rep.bound_id},{rep.n},{rep.measured_lambda:.17g}\n")


def write_spectrum_csv(eigensystem, filename) -> None:
    with open(filename, "w") as fh:
        fh.write("n,lambda,residual\n")
        for i, (lam, res) in enumerate(zip(eigensystem.eigenvalues,
                                           eigensystem.residuals), start=1):
            fh.write(f"{i},{lam:.17g},{res:.17g}\n")


def content_hash(filename) -> str:
    digest = hashlib.sha256()
    with open(filename, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, config: dict, extra: dict | None = None) -> Path:
    """Run manifest: config plus content hashes of files already written."""
    out_dir = Path(out_dir)
    hashes = {p.name: content_hash(p) for p in sorted(out_dir.iterdir())
              if p.is_file() and p.name != "manifest.json"}
    doc = {"config": config, "file_hashes": hashes}
    if extra:
        doc.update(extra)
    target = out_dir / "manifest.json"
    with open(target, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_noser)
    return target


def _noser(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")
