"""PLY persistence in the de-facto Gaussian-splat interchange layout.

Binary little-endian PLY, one vertex element, float32 properties in
exactly this order:

    x y z nx ny nz f_dc_0..2 f_rest_0..(3B-4) opacity scale_0..2 rot_0..3

with B = (k+1)^2 SH bases.  All stored values are raw (pre-activation):
scale is log-scale, opacity a logit, rot the unnormalized quaternion
(w, x, y, z).  f_rest is channel-major: index j maps to channel j // (B-1)
and basis 1 + j % (B-1).  Normals carry no data here; they are written
as zeros and ignored on read, matching files produced by common
splatting trainers.  The SH order is inferred from the f_rest property
count and must land in {0, 1, 2, 3}.

Round trips are bit-exact at float32: write(read(path)) reproduces the
file byte for byte.
"""

from __future__ import annotations

import math

import numpy as np

from .scene import GaussianCloud

_PRE = ("x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2")
_POST = ("opacity", "scale_0", "scale_1", "scale_2",
         "rot_0", "rot_1", "rot_2", "rot_3")
_FORMAT_LINE = "format binary_little_endian 1.0"


class PlyFormatError(ValueError):
    """Header or body does not match the interchange layout."""


def _expected_properties(n_rest):
    return list(_PRE) + [f"f_rest_{i}" for i in range(n_rest)] + list(_POST)


def write_ply(cloud: GaussianCloud, path):
    n = cloud.n
    b = cloud.sh.shape[2]
    n_rest = 3 * (b - 1)
    cols = [
        cloud.mu,                      # x y z
        np.zeros((n, 3)),              # nx ny nz
        cloud.sh[:, :, 0],             # f_dc
        cloud.sh[:, :, 1:].reshape(n, n_rest),  # f_rest, channel-major
        cloud.opacity_logit[:, None],
        cloud.scale_log,
        cloud.rot_raw,
    ]
    data = np.concatenate(cols, axis=1).astype("<f4")
    header_lines = ["ply", _FORMAT_LINE, f"element vertex {n}"]
    header_lines += [f"property float {name}" for name in _expected_properties(n_rest)]
    header_lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header_lines) + "\n").encode("ascii"))
        f.write(data.tobytes())


def read_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        blob = f.read()
    marker = b"end_header\n"
    pos = blob.find(marker)
    if not blob.startswith(b"ply\n") or pos < 0:
        raise PlyFormatError("malformed header: not a ply file")
    header = blob[:pos].decode("ascii", errors="replace").splitlines()
    body = blob[pos + len(marker):]

    n_vertices = None
    names = []
    for line in header[1:]:
        line = line.strip()
        if not line or line.startswith("comment"):
            continue
        if line.startswith("format"):
            if line != _FORMAT_LINE:
                raise PlyFormatError(f"malformed header: unsupported format {line!r}")
        elif line.startswith("element"):
            parts = line.split()
            if len(parts) != 3 or parts[1] != "vertex" or n_vertices is not None:
                raise PlyFormatError(f"malformed header: unexpected element {line!r}")
            n_vertices = int(parts[2])
        elif line.startswith("property"):
            parts = line.split()
            if len(parts) != 3 or parts[1] != "float":
                raise PlyFormatError(f"malformed header: unsupported property {line!r}")
            names.append(parts[2])
        else:
            raise PlyFormatError(f"malformed header: unexpected line {line!r}")
    if n_vertices is None:
        raise PlyFormatError("malformed header: no vertex element")

    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    expected = _expected_properties(n_rest)
    unknown = sorted(set(names) - set(expected))
    if unknown:
        raise PlyFormatError(f"unknown properties: {', '.join(unknown)}")
    if names != expected:
        missing = sorted(set(expected) - set(names))
        if missing:
            raise PlyFormatError(f"malformed header: missing properties {', '.join(missing)}")
        raise PlyFormatError("malformed header: property order mismatch")
    if n_rest % 3 != 0:
        raise PlyFormatError(f"f_rest count {n_rest} is not divisible by 3")
    n_bases = n_rest // 3 + 1
    order = int(math.isqrt(n_bases)) - 1
    if (order + 1) ** 2 != n_bases or not 0 <= order <= 3:
        raise PlyFormatError(f"f_rest count {n_rest} matches no SH order in 0..3")

    n_cols = len(expected)
    need = n_vertices * n_cols * 4
    if len(body) < need:
        raise PlyFormatError(f"truncated body: need {need} bytes, have {len(body)}")
    if len(body) > need:
        raise PlyFormatError(f"trailing data after vertex body: {len(body) - need} bytes")
    data = np.frombuffer(body, dtype="<f4").reshape(n_vertices, n_cols).astype(float)

    sh = np.empty((n_vertices, 3, n_bases))
    sh[:, :, 0] = data[:, 6:9]
    sh[:, :, 1:] = data[:, 9:9 + n_rest].reshape(n_vertices, 3, n_bases - 1)
    return GaussianCloud(
        mu=data[:, 0:3],
        scale_log=data[:, 9 + n_rest + 1:9 + n_rest + 4],
        rot_raw=data[:, 9 + n_rest + 4:9 + n_rest + 8],
        opacity_logit=data[:, 9 + n_rest],
        sh=sh,
        sh_order=order,
    )
