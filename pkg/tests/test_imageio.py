import numpy as np
import pytest

from dualstyle.errors import FormatError
from dualstyle.imageio import (ImageGrid, from_bytes, make_grid, read_image,
                               to_bytes, write_image)


def test_round_trip_within_quantization(tmp_path, rng):
    img = rng.uniform(-1, 1, size=(3, 16, 16)).astype(np.float32)
    path = tmp_path / "img.ppm"
    write_image(path, img)
    back = read_image(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-7


def test_round_trip_bytes_exact(tmp_path, rng):
    img = rng.uniform(-1, 1, size=(3, 8, 8)).astype(np.float32)
    a = tmp_path / "a.ppm"
    b = tmp_path / "b.ppm"
    write_image(a, img)
    write_image(b, read_image(a))
    assert a.read_bytes() == b.read_bytes()


def test_zero_image_maps_to_mid_gray():
    data = to_bytes(np.zeros((3, 4, 4), dtype=np.float32))
    assert (data == 128).all()


def test_byte_mapping_inverse():
    data = np.arange(256, dtype=np.uint8).reshape(1, -1)[None].repeat(3, 0).transpose(1, 2, 0)
    x = from_bytes(data)
    assert np.array_equal(to_bytes(x), data)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(48))
    with pytest.raises(FormatError):
        read_image(p)


def test_truncated_pixels_rejected(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError):
        read_image(p)


def test_comment_tolerant_header(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# a comment\n2 2\n255\n" + bytes(12))
    img = read_image(p)
    assert img.shape == (3, 2, 2)


def test_grid_layout(rng):
    tiles = [rng.uniform(-1, 1, size=(3, 4, 4)).astype(np.float32) for _ in range(3)]
    grid = ImageGrid(1, 3, 4, pad=1)
    for i, t in enumerate(tiles):
        grid.set(0, i, t)
    canvas = grid.compose()
    assert canvas.shape == (3, 4, 3 * 5 - 1)
    for i, t in enumerate(tiles):
        assert np.array_equal(canvas[:, :, i * 5:i * 5 + 4], t)


def test_grid_rejects_wrong_tile_size():
    grid = ImageGrid(1, 1, 4)
    with pytest.raises(FormatError):
        grid.set(0, 0, np.zeros((3, 5, 5), dtype=np.float32))


def test_grid_captions_sidecar(tmp_path, rng):
    grid = ImageGrid(1, 2, 4)
    grid.set(0, 0, np.zeros((3, 4, 4), dtype=np.float32))
    grid.set(0, 1, np.zeros((3, 4, 4), dtype=np.float32))
    grid.col_captions = ["source", "output"]
    out = tmp_path / "g.ppm"
    grid.save(out)
    assert out.exists()
    sidecar = (tmp_path / "g.txt").read_text()
    assert "source" in sidecar and "output" in sidecar


def test_make_grid(rng):
    tiles = [rng.uniform(-1, 1, size=(3, 4, 4)).astype(np.float32) for _ in range(5)]
    canvas = make_grid(tiles, cols=2)
    assert canvas.shape[1] == 3 * 5 - 1   # 3 rows
    with pytest.raises(FormatError):
        make_grid([], cols=2)
