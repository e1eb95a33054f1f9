import numpy as np
import pytest

from ddcn import data
from ddcn.errors import DataFormatError
from ddcn.tensor import make_rng


# ---------------------------------------------------------------------------
# netpbm round trips

def test_ppm_single_red_pixel(tmp_path):
    p = tmp_path / "px.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    rgb = data.read_ppm(p)
    assert rgb.shape == (3, 1, 1)
    assert np.allclose(rgb[:, 0, 0], [1.0, 0.0, 0.0])


def test_ppm_round_trip(tmp_path):
    rng = make_rng(1)
    rgb = rng.random((3, 7, 5)).astype(np.float32)
    p = tmp_path / "a.ppm"
    data.write_ppm(p, rgb)
    back = data.read_ppm(p)
    assert back.shape == rgb.shape
    assert np.max(np.abs(back - rgb)) <= 0.5 / 255 + 1e-6


def test_pgm16_round_trip_and_unit(tmp_path):
    vals = np.array([[0, 5000], [65535, 1]], dtype=np.uint16)
    p = tmp_path / "d.pgm"
    data.write_pgm16(p, vals)
    back = data.read_pgm16(p)
    assert np.array_equal(back, vals)
    # 5000 mm reads back as 5 m through load_pair
    rgbp = tmp_path / "d.ppm"
    data.write_ppm(rgbp, np.zeros((3, 2, 2), dtype=np.float32))
    sample = data.load_pair(rgbp, p, (2, 2))
    assert sample.depth[0, 0, 1] == pytest.approx(5.0)
    assert not sample.mask[0, 0, 0]  # zero depth masked
    assert sample.mask[0, 0, 1]


def test_pgm16_big_endian_on_disk(tmp_path):
    p = tmp_path / "be.pgm"
    data.write_pgm16(p, np.array([[0x0102]], dtype=np.uint16))
    raw = p.read_bytes()
    assert raw.endswith(bytes([0x01, 0x02]))


def test_header_comments_allowed(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# a comment\n2 1\n# more\n255\n" + bytes(6))
    assert data.read_ppm(p).shape == (3, 1, 2)


def test_bad_magic_and_maxval(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n000")
    with pytest.raises(DataFormatError):
        data.read_ppm(p)
    p2 = tmp_path / "bad2.ppm"
    p2.write_bytes(b"P6\n1 1\n127\n" + bytes(3))
    with pytest.raises(DataFormatError):
        data.read_ppm(p2)
    p3 = tmp_path / "short.ppm"
    p3.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(DataFormatError):
        data.read_ppm(p3)


def test_pair_dimension_mismatch(tmp_path):
    data.write_ppm(tmp_path / "r.ppm", np.zeros((3, 4, 4), dtype=np.float32))
    data.write_pgm16(tmp_path / "d.pgm", np.ones((5, 4), dtype=np.uint16))
    with pytest.raises(DataFormatError):
        data.load_pair(tmp_path / "r.ppm", tmp_path / "d.pgm", (4, 4))


# ---------------------------------------------------------------------------
# resize

def test_resize_same_size_is_identity():
    rng = make_rng(2)
    img = rng.random((3, 6, 7)).astype(np.float32)
    out, _ = data.bilinear_resize(img, (6, 7))
    assert np.array_equal(out, img)


def test_resize_constant_stays_constant():
    img = np.full((1, 4, 4), 3.5, dtype=np.float32)
    out, _ = data.bilinear_resize(img, (7, 9))
    assert np.allclose(out, 3.5)


def test_resize_mask_propagates_holes():
    depth = np.ones((1, 4, 4), dtype=np.float32)
    mask = np.ones((1, 4, 4), dtype=bool)
    depth[0, 1, 1] = 0.0
    mask[0, 1, 1] = False
    out, out_mask = data.bilinear_resize(depth, (8, 8), mask)
    assert not out_mask.all()
    assert np.all(out[~out_mask] == 0.0)
    assert np.all(out[out_mask] == 1.0)  # no bleed from the hole


def test_round_trip_within_quantization(tmp_path):
    sample = data.synth_scene(5, (16, 12))
    names = data.save_pair(tmp_path, "s", sample)
    back = data.load_pair(tmp_path / names[0], tmp_path / names[1], (16, 12))
    assert np.max(np.abs(back.rgb - sample.rgb)) <= 0.5 / 255 + 1e-6
    assert np.max(np.abs(back.depth - sample.depth)) <= 0.5e-3 + 1e-6
    assert np.array_equal(back.mask, sample.mask)


# ---------------------------------------------------------------------------
# manifest

def test_manifest_round_trip(tmp_path):
    entries = [("a", "a.ppm", "a.pgm"), ("b", "b.ppm", "b.pgm")]
    mpath = tmp_path / "manifest.tsv"
    data.write_manifest(mpath, entries)
    back = data.read_manifest(mpath)
    assert [sid for sid, _, _ in back] == ["a", "b"]
    assert back[0][1] == str(tmp_path / "a.ppm")


def test_manifest_rejects_wrong_units(tmp_path):
    mpath = tmp_path / "m.tsv"
    mpath.write_text("# depth_unit=cm\na\ta.ppm\ta.pgm\n")
    with pytest.raises(DataFormatError):
        data.read_manifest(mpath)


def test_manifest_rejects_malformed_row(tmp_path):
    mpath = tmp_path / "m.tsv"
    mpath.write_text("a,b,c\n")
    with pytest.raises(DataFormatError):
        data.read_manifest(mpath)


# ---------------------------------------------------------------------------
# shuffle/split

def test_split_1449_into_paper_sizes():
    ids = [f"img{i}" for i in range(1449)]
    index = data.shuffle_split(ids, seed=0)
    train, val, test = index.ids("train"), index.ids("val"), index.ids("test")
    assert (len(train), len(val), len(test)) == (800, 200, 449)
    assert set(train) | set(val) | set(test) == set(ids)
    assert not (set(train) & set(val)) and not (set(val) & set(test))


def test_split_deterministic():
    ids = [str(i) for i in range(50)]
    a = data.shuffle_split(ids, seed=9, sizes=(30, 10, 10))
    b = data.shuffle_split(ids, seed=9, sizes=(30, 10, 10))
    assert a.entries == b.entries and a.split == b.split
    c = data.shuffle_split(ids, seed=10, sizes=(30, 10, 10))
    assert a.entries != c.entries


def test_split_degenerate_and_overflow():
    index = data.shuffle_split(["only"], seed=0, sizes=(1, 0, 0))
    assert index.ids("train") == ["only"]
    with pytest.raises(DataFormatError):
        data.shuffle_split(["a"], seed=0, sizes=(1, 1, 0))


# ---------------------------------------------------------------------------
# batches

def _index(n, seed=0):
    return data.shuffle_split([f"s{i}" for i in range(n)], seed=seed, sizes=(n, 0, 0))


def test_batch_sizes_with_partial_tail():
    batches = list(data.batch_iter(_index(10), "train", 4, epoch=0))
    assert [len(b) for b in batches] == [4, 4, 2]
    flat = [i for b in batches for i in b]
    assert sorted(flat) == sorted(f"s{i}" for i in range(10))


def test_batch_order_deterministic_per_epoch():
    a = list(data.batch_iter(_index(10), "train", 3, epoch=2))
    b = list(data.batch_iter(_index(10), "train", 3, epoch=2))
    assert a == b


def test_batch_order_differs_across_epochs():
    differing = 0
    for seed in range(20):
        e0 = list(data.batch_iter(_index(8, seed), "train", 8, epoch=0))
        e1 = list(data.batch_iter(_index(8, seed), "train", 8, epoch=1))
        differing += e0 != e1
    assert differing >= 19  # identical orders have probability 1/8! per seed


# ---------------------------------------------------------------------------
# synthetic scenes

def test_synth_deterministic():
    a = data.synth_scene(3, (16, 16))
    b = data.synth_scene(3, (16, 16))
    assert np.array_equal(a.rgb, b.rgb)
    assert np.array_equal(a.depth, b.depth)


def test_synth_bounds_and_mask():
    for seed in range(8):
        s = data.synth_scene(seed, (24, 20))
        assert s.depth.min() >= 1.0 and s.depth.max() <= 10.0
        assert s.mask.all()
        assert s.rgb.min() >= 0.0 and s.rgb.max() <= 1.0


def test_synth_rejects_tiny():
    with pytest.raises(DataFormatError):
        data.synth_scene(0, (4, 4))


def test_synth_dataset_keys():
    ds = data.synth_dataset(3, (8, 8), seed=1)
    assert sorted(ds) == ["synth000", "synth001", "synth002"]
