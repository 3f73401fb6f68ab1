import struct

import numpy as np
import pytest
from PIL import Image

from persense.core import InstanceMask
from persense.metrics import EvalReport
from persense.persist import (
    BadMagicError,
    DtypeMismatchError,
    MaskRecord,
    REPORT_HEADER,
    TruncatedError,
    decode_grid,
    encode_grid,
    export_pgm,
    read_grid,
    read_masks,
    read_report,
    rle_decode,
    rle_encode,
    write_grid,
    write_masks,
    write_report,
)


def test_one_by_one_float_layout(tmp_path):
    g = np.array([[3.25]], np.float32)
    raw = encode_grid(g)
    assert len(raw) == 13 + 4
    assert raw[:4] == b"PSG1"
    assert struct.unpack("<IIB", raw[4:13]) == (1, 1, 0)
    assert struct.unpack("<f", raw[13:])[0] == 3.25
    write_grid(tmp_path / "g.psg", g)
    back = read_grid(tmp_path / "g.psg")
    assert back.dtype == np.float32 and back.tobytes() == g.tobytes()


def test_uint8_layout_is_row_major():
    g = np.arange(6, dtype=np.uint8).reshape(2, 3)
    raw = encode_grid(g)
    assert struct.unpack("<IIB", raw[4:13]) == (3, 2, 1)
    assert raw[13:] == bytes(range(6))


def test_grid_errors_have_distinct_codes():
    good = encode_grid(np.zeros((2, 2), np.float32))
    with pytest.raises(BadMagicError) as e1:
        decode_grid(b"XXXX" + good[4:])
    with pytest.raises(TruncatedError) as e2:
        decode_grid(good[:-1])
    with pytest.raises(TruncatedError):
        decode_grid(good[:8])
    with pytest.raises(DtypeMismatchError) as e3:
        decode_grid(good, dtype=np.uint8)
    with pytest.raises(DtypeMismatchError):
        encode_grid(np.zeros((2, 2), np.float64))
    assert len({e1.value.code, e2.value.code, e3.value.code}) == 3


def test_write_grid_leaves_no_temp_files(tmp_path):
    write_grid(tmp_path / "a.psg", np.ones((3, 3), np.uint8))
    assert [p.name for p in tmp_path.iterdir()] == ["a.psg"]


def test_rle_examples():
    assert rle_encode(np.zeros((4, 4), np.uint8)) == [16]
    assert rle_encode(np.ones((2, 3), np.uint8)) == [0, 6]
    m = np.array([[0, 1, 1], [1, 0, 0]], np.uint8)
    assert rle_encode(m) == [1, 3, 2]
    assert (rle_decode([1, 3, 2], 3, 2) == m).all()
    rec = MaskRecord.from_mask(InstanceMask(np.zeros((4, 4)), 0.5))
    assert rec.rle == [16]
    with pytest.raises(ValueError):
        rle_decode([3], 2, 2)


def test_mask_record_rejects_short_runs():
    with pytest.raises(ValueError):
        MaskRecord.from_dict({"width": 2, "height": 2, "rle": [1, 1], "quality": 0.5})


def fuzz_grids(n=200, seed=11):
    rng = np.random.default_rng(seed)
    for i in range(n):
        h, w = rng.integers(1, 40, size=2)
        if i % 2:
            yield rng.integers(0, 256, (h, w)).astype(np.uint8)
        else:
            bits = rng.integers(0, 2**32, (h, w), dtype=np.uint64).astype(np.uint32)
            g = bits.view(np.float32)
            # keep finite values: ScalarGrid forbids NaN/inf
            yield np.where(np.isfinite(g), g, np.float32(rng.normal())).astype(np.float32)


def test_grid_fuzz_round_trip_bit_exact(tmp_path):
    for i, g in enumerate(fuzz_grids()):
        p = tmp_path / f"{i}.psg"
        write_grid(p, g)
        back = read_grid(p)
        assert back.dtype == g.dtype and back.shape == g.shape
        assert back.tobytes() == g.tobytes()


def test_mask_fuzz_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    masks = []
    for _ in range(200):
        h, w = rng.integers(1, 30, size=2)
        m = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        masks.append(InstanceMask(m, float(rng.random())))
    write_masks(tmp_path / "m.jsonl", masks)
    back = read_masks(tmp_path / "m.jsonl")
    assert len(back) == 200
    for a, b in zip(masks, back):
        assert a.same_pixels(b) and a.quality == b.quality
        assert sum(MaskRecord.from_mask(a).rle) == a.mask.size


def test_pgm_header_and_external_reader(tmp_path):
    g = np.array([[0, 17], [200, 255]], np.uint8)
    export_pgm(g, tmp_path / "g.pgm")
    raw = (tmp_path / "g.pgm").read_bytes()
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 17, 200, 255])
    big = np.random.default_rng(0).integers(0, 256, (13, 29)).astype(np.uint8)
    export_pgm(big, tmp_path / "big.pgm")
    with Image.open(tmp_path / "big.pgm") as im:
        assert im.mode == "L" and im.size == (29, 13)
        assert (np.asarray(im) == big).all()


def test_pgm_binary_mask_scaled(tmp_path):
    m = np.array([[True, False], [False, True]])
    export_pgm(m, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes()[-4:] == bytes([255, 0, 0, 255])
    export_pgm(m.astype(np.uint8), tmp_path / "n.pgm", binary=True)
    assert (tmp_path / "n.pgm").read_bytes()[-4:] == bytes([255, 0, 0, 255])


def _report(i, miou, err, bin_):
    return EvalReport(f"img_{i}", "persense_pp", miou, err, err, 0.9 + i / 100, 1.0 / 3, bin_, 0.1 * i + 1e-17)


def test_report_empty_is_header_only(tmp_path):
    write_report([], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_bytes() == (",".join(REPORT_HEADER) + "\n").encode()


def test_report_two_rows_plus_aggregate(tmp_path):
    rs = [_report(1, 0.123456789012345, 1.0, "Low"), _report(2, 2 / 3, 3.0, "High")]
    write_report(rs, tmp_path / "r.csv")
    raw = (tmp_path / "r.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert len(lines) == 4 and lines[0] == "image_id,variant,miou,mae,rmse,precision,recall,bin,cv"
    assert lines[-1].startswith("aggregate,")
    back = read_report(tmp_path / "r.csv")
    for r, row in zip(rs, back):
        assert abs(row["miou"] - r.miou) <= 1e-9 and abs(row["cv"] - r.cv_scale) <= 1e-9
        assert abs(row["precision"] - r.prompt_precision) <= 1e-9
    assert back[-1]["mae"] == 2.0 and back[-1]["rmse"] == pytest.approx(5 ** 0.5)


def test_report_bins_and_determinism(tmp_path):
    rs = [_report(i, i / 10, float(i), ("Low", "High")[i % 2]) for i in range(1, 6)]
    write_report(rs, tmp_path / "a.csv", bins=True)
    write_report(rs, tmp_path / "b.csv", bins=True)
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    ids = [r["image_id"] for r in read_report(tmp_path / "a.csv")]
    assert ids[-3:] == ["bin:Low", "bin:High", "aggregate"]
