"""Tests for the binary splat PLY reader/writer."""

import numpy as np
import pytest

from splatmark import datasets, ply


def _cloud(seed=0, n=25, sh_order=1):
    return datasets.random_cloud(np.random.default_rng(seed), n, sh_order=sh_order)


class TestRoundTrip:
    @pytest.mark.parametrize("sh_order", [0, 1, 2, 3])
    def test_values_survive_at_float32(self, tmp_path, sh_order):
        cloud = _cloud(seed=sh_order, sh_order=sh_order)
        path = tmp_path / "scene.ply"
        ply.write_ply(cloud, path)
        back = ply.read_ply(path)
        assert back.n == cloud.n
        assert back.sh_order == sh_order
        for name in ("mu", "scale_log", "rot_raw", "opacity_logit", "sh"):
            np.testing.assert_array_equal(
                getattr(back, name), getattr(cloud, name).astype(np.float32))

    def test_file_level_round_trip_is_byte_exact(self, tmp_path):
        # write(read(file)) must reproduce the file exactly.
        first = tmp_path / "a.ply"
        second = tmp_path / "b.ply"
        ply.write_ply(_cloud(seed=9), first)
        ply.write_ply(ply.read_ply(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "scene.ply"
        ply.write_ply(_cloud(sh_order=1), path)
        header = path.read_bytes().split(b"end_header")[0].decode().splitlines()
        assert header[0] == "ply"
        assert header[1] == "format binary_little_endian 1.0"
        names = [ln.split()[-1] for ln in header if ln.startswith("property")]
        # order 1: 3 dc + 9 rest + 14 fixed slots
        assert len(names) == 26
        assert names[:6] == ["x", "y", "z", "nx", "ny", "nz"]
        assert names[-8:] == ["opacity", "scale_0", "scale_1", "scale_2",
                              "rot_0", "rot_1", "rot_2", "rot_3"]

    def test_rest_is_channel_major(self, tmp_path):
        cloud = _cloud(n=4, sh_order=1)
        path = tmp_path / "scene.ply"
        ply.write_ply(cloud, path)
        blob = path.read_bytes()
        body = blob.split(b"end_header\n", 1)[1]
        data = np.frombuffer(body, dtype="<f4").reshape(4, 26)
        # f_rest_j -> channel j // (B-1), basis 1 + j % (B-1); B = 4 here.
        rest = data[:, 9:18].reshape(4, 3, 3)
        np.testing.assert_array_equal(rest, cloud.sh[:, :, 1:].astype(np.float32))


class TestErrors:
    def test_not_a_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"obj\nnonsense\n")
        with pytest.raises(ply.PlyFormatError, match="not a ply"):
            ply.read_ply(path)

    def test_wrong_format_line(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(
            b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(ply.PlyFormatError, match="format"):
            ply.read_ply(path)

    def test_unknown_property(self, tmp_path):
        good = tmp_path / "good.ply"
        ply.write_ply(_cloud(n=3), good)
        blob = good.read_bytes().replace(b"property float opacity",
                                         b"property float alpha")
        bad = tmp_path / "bad.ply"
        bad.write_bytes(blob)
        with pytest.raises(ply.PlyFormatError, match="alpha"):
            ply.read_ply(bad)

    def test_property_order_mismatch(self, tmp_path):
        good = tmp_path / "good.ply"
        ply.write_ply(_cloud(n=3), good)
        blob = good.read_bytes()
        a, b = b"property float scale_0", b"property float scale_1"
        swapped = blob.replace(a, b"@TMP@").replace(b, a).replace(b"@TMP@", b)
        bad = tmp_path / "bad.ply"
        bad.write_bytes(swapped)
        with pytest.raises(ply.PlyFormatError, match="order"):
            ply.read_ply(bad)

    def test_rest_count_matches_no_order(self, tmp_path):
        # 12 f_rest properties -> 5 bases, not a square.
        names = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                 + [f"f_rest_{i}" for i in range(12)]
                 + ["opacity", "scale_0", "scale_1", "scale_2",
                    "rot_0", "rot_1", "rot_2", "rot_3"])
        lines = ["ply", "format binary_little_endian 1.0", "element vertex 1"]
        lines += [f"property float {n}" for n in names]
        lines.append("end_header")
        path = tmp_path / "bad.ply"
        path.write_bytes(("\n".join(lines) + "\n").encode()
                         + b"\x00" * (len(names) * 4))
        with pytest.raises(ply.PlyFormatError, match="no SH order"):
            ply.read_ply(path)

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "scene.ply"
        ply.write_ply(_cloud(n=5), path)
        blob = path.read_bytes()
        trimmed = tmp_path / "trimmed.ply"
        trimmed.write_bytes(blob[:-10])
        with pytest.raises(ply.PlyFormatError, match="truncated"):
            ply.read_ply(trimmed)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "scene.ply"
        ply.write_ply(_cloud(n=5), path)
        padded = tmp_path / "padded.ply"
        padded.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(ply.PlyFormatError, match="trailing"):
            ply.read_ply(padded)

    def test_missing_vertex_element(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"ply\nformat binary_little_endian 1.0\nend_header\n")
        with pytest.raises(ply.PlyFormatError, match="vertex"):
            ply.read_ply(path)
