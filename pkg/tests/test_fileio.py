"""Tests for point set, mesh, image, intrinsics and transform files."""

import json
import struct

import numpy as np
import pytest

from camera import CameraIntrinsics
from errors import DegenerateInputError, InvalidParameterError, ParseError
from fileio import (
    read_intrinsics,
    read_key_values,
    read_mask,
    read_mesh,
    read_pgm,
    read_pointset,
    read_transform,
    write_depth,
    write_pgm,
    write_pointset,
    write_transform,
)
from geometry import SimilarityTransform


def test_xyz_keeps_order_and_skips_comments(tmp_path):
    path = tmp_path / "points.xyz"
    path.write_text("# header\n1 2 3\n\n4.5 -6 7e-1  # trailing\n")
    np.testing.assert_array_equal(read_pointset(path), [[1, 2, 3], [4.5, -6, 0.7]])


def test_xyz_error_names_the_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 5\n")
    with pytest.raises(ParseError, match=r"bad\.xyz:2:"):
        read_pointset(path)


def test_empty_point_file_is_degenerate(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("# nothing here\n")
    with pytest.raises(DegenerateInputError):
        read_pointset(path)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ParseError):
        read_pointset(tmp_path / "absent.xyz")


def test_ascii_ply_ignores_extra_vertex_properties(tmp_path):
    path = tmp_path / "colored.ply"
    path.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n0 0 1 255 0 0\n1 0.5 0 0 255 0\n"
    )
    np.testing.assert_allclose(read_pointset(path), [[0, 0, 1], [1, 0.5, 0]])


def test_ascii_ply_row_error_names_the_line(tmp_path):
    path = tmp_path / "short.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n1 0\n"
    )
    with pytest.raises(ParseError, match=r"short\.ply:9:"):
        read_pointset(path)


def test_binary_ply_mesh(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
    )
    vertices = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)]
    body = b"".join(struct.pack("<3f", *v) for v in vertices)
    body += struct.pack("<B4i", 4, 0, 1, 2, 3)
    path = tmp_path / "quad.ply"
    path.write_bytes(header.encode("ascii") + body)
    mesh = read_mesh(path)
    np.testing.assert_allclose(mesh.vertices, vertices)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


def test_truncated_binary_ply(tmp_path):
    header = "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\n" \
             "property double z\nend_header\n"
    path = tmp_path / "cut.ply"
    path.write_bytes(header.encode("ascii") + np.zeros(5).tobytes())
    with pytest.raises(ParseError, match="ends inside"):
        read_pointset(path)


def test_obj_fans_polygons_and_resolves_negative_indices(tmp_path):
    path = tmp_path / "shape.obj"
    path.write_text(
        "# pentagon and a triangle\n"
        "v 0 0 0\nv 1 0 0\nv 1.5 1 0\nv 0.5 1.5 0\nv -0.5 1 0\n"
        "vn 0 0 1\n"
        "f 1/1/1 2/2/1 3/3/1 4/4/1 5/5/1\n"
        "v 0 0 1\n"
        "f -1 -6 -5\n"
    )
    mesh = read_mesh(path)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3], [0, 3, 4], [5, 0, 1]])
    assert len(read_pointset(path)) == 6


def test_obj_index_out_of_range(tmp_path):
    path = tmp_path / "broken.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n")
    with pytest.raises(ParseError, match=r"broken\.obj:4:"):
        read_mesh(path)


@pytest.mark.parametrize("name, binary", [("pts.xyz", False), ("pts.ply", False), ("pts.ply", True)])
def test_written_point_sets_read_back_exactly(tmp_path, rng, name, binary):
    P = rng.normal(size=(20, 3)) * 1e3
    write_pointset(tmp_path / name, P, binary=binary)
    np.testing.assert_array_equal(read_pointset(tmp_path / name), P)


def test_writing_obj_point_sets_is_refused(tmp_path):
    with pytest.raises(InvalidParameterError):
        write_pointset(tmp_path / "points.obj", np.zeros((2, 3)))


@pytest.mark.parametrize("binary, maxval", [(False, 255), (True, 255), (True, 65535)])
def test_pgm_round_trip(tmp_path, binary, maxval):
    image = np.arange(12).reshape(3, 4) * (maxval // 11)
    write_pgm(tmp_path / "img.pgm", image, maxval=maxval, binary=binary, comments=["made in a test"])
    np.testing.assert_array_equal(read_pgm(tmp_path / "img.pgm"), image)


def test_pgm_mask_nonzero_is_set(tmp_path):
    path = tmp_path / "mask.pgm"
    path.write_text("P2\n# comment\n3 2\n255\n0 0 7\n255 0 0\n")
    mask = read_mask(path)
    assert (mask.width, mask.height) == (3, 2)
    np.testing.assert_array_equal(mask.pixels(), [[2, 0], [0, 1]])


def test_pgm_with_wrong_pixel_count(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_text("P2\n2 2\n255\n0 1 2\n")
    with pytest.raises(ParseError):
        read_pgm(path)


def test_depth_export(tmp_path):
    depth = np.zeros((2, 3))
    depth[0, 1] = 2.0
    depth[1, 2] = 4.0
    pgm, dump = write_depth(tmp_path / "depth.pgm", depth)
    text = pgm.read_text()
    assert "# depth_scale" in text and "# no_data 0" in text
    stored = read_pgm(pgm)
    assert stored[1, 2] == 65535 and stored[0, 0] == 0
    assert stored[0, 1] == round(2.0 * 65535 / 4.0)
    assert dump.read_text().splitlines() == ["1 0 2", "2 1 4"]


def test_intrinsics(tmp_path):
    path = tmp_path / "camera.txt"
    path.write_text("fx = 1000\nfy = 1000\ncx = 319.5\ncy = 239.5\nwidth = 640\nheight = 480\n")
    assert read_intrinsics(path) == CameraIntrinsics(1000.0, 1000.0, 319.5, 239.5, 640, 480)


def test_intrinsics_missing_field(tmp_path):
    path = tmp_path / "camera.txt"
    path.write_text("fx = 1000\nfy = 1000\ncx = 319.5\n")
    with pytest.raises(ParseError, match="missing"):
        read_intrinsics(path)


def test_key_value_errors_name_the_line(tmp_path):
    path = tmp_path / "params.cfg"
    path.write_text("sigma0 = 0.5\nnonsense\n")
    with pytest.raises(ParseError, match=r"params\.cfg:2:"):
        read_key_values(path)


def test_transform_document_round_trip(tmp_path, rng):
    theta = SimilarityTransform(q=rng.normal(size=4), t=rng.normal(size=3), s=1.25)
    path = tmp_path / "out" / "transform.json"
    write_transform(path, theta, {"converged": True, "levels": [{"sigma": np.float64(0.5)}]})
    document = json.loads(path.read_text())
    assert document["converged"] is True
    assert len(document["matrix"]) == 4
    back = read_transform(path)
    np.testing.assert_array_equal(back.q, theta.normalized().q)
    np.testing.assert_array_equal(back.t, theta.t)
    assert back.s == 1.25


def test_malformed_transform(tmp_path):
    path = tmp_path / "t.json"
    path.write_text('{"quaternion": [1, 0, 0], "translation": [0, 0, 0]}')
    with pytest.raises(ParseError):
        read_transform(path)


def test_obj_cube_of_quads(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
        "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 3 4 8 7\nf 2 3 7 6\nf 1 5 8 4\n"
    )
    mesh = read_mesh(path)
    assert mesh.vertices.shape == (8, 3)
    assert mesh.faces.shape == (12, 3)


def test_obj_without_faces_is_readable(tmp_path):
    path = tmp_path / "cloud.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
    mesh = read_mesh(path)
    assert mesh.faces.shape == (0, 3)


def test_big_endian_ply_is_refused(tmp_path):
    path = tmp_path / "big.ply"
    path.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n")
    with pytest.raises(ParseError, match=r"big\.ply:2:"):
        read_pointset(path)
