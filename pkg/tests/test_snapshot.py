import io

import numpy as np
import pytest

from thoraxseg.errors import DataError
from thoraxseg.snapshot import (BUNDLE_MAGIC, TENSOR_MAGIC, load_bundle,
                                load_snapshot, read_array, save_bundle,
                                save_snapshot, write_array)


def roundtrip(arr):
    buf = io.BytesIO()
    write_array(buf, arr)
    buf.seek(0)
    return read_array(buf)


class TestTensorRecords:
    @pytest.mark.parametrize("shape", [(), (0,), (5,), (2, 3), (2, 3, 4, 5)])
    def test_roundtrip_shapes(self, shape):
        arr = np.random.default_rng(1).normal(size=shape)
        out = roundtrip(arr)
        assert out.shape == arr.shape
        np.testing.assert_array_equal(out, arr)

    def test_roundtrip_is_bitwise_for_special_values(self):
        arr = np.array([0.0, -0.0, np.nan, np.inf, -np.inf, 1e-310, np.pi])
        out = roundtrip(arr)
        assert out.tobytes() == arr.tobytes()

    def test_bad_magic(self):
        buf = io.BytesIO(b"XXXX" + b"\x00" * 16)
        with pytest.raises(DataError, match="magic"):
            read_array(buf)

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_array(buf, np.ones(4))
        data = buf.getvalue()[:-8]
        with pytest.raises(DataError, match="truncated"):
            read_array(io.BytesIO(data))

    def test_file_roundtrip(self, tmp_path):
        arr = np.random.default_rng(2).normal(size=(3, 4))
        save_snapshot(tmp_path / "t.sgt", arr)
        out = load_snapshot(tmp_path / "t.sgt")
        assert out.tobytes() == arr.tobytes()

    def test_magics_are_distinct(self):
        assert TENSOR_MAGIC != BUNDLE_MAGIC


class TestBundles:
    def test_roundtrip_preserves_order_and_bits(self, tmp_path):
        rng = np.random.default_rng(3)
        named = {
            "b.second": rng.normal(size=(2, 2)),
            "a.first": rng.normal(size=(3,)),
            "z.scalar": np.array(4.25),
        }
        path = tmp_path / "bundle.sgm"
        save_bundle(path, {"depth": 2}, named)
        config, loaded = load_bundle(path)
        assert config == {"depth": 2}
        assert list(loaded) == list(named)  # insertion order, not sorted
        for name in named:
            assert loaded[name].tobytes() == named[name].tobytes()

    def test_bad_bundle_magic(self, tmp_path):
        path = tmp_path / "bad.sgm"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError, match="magic"):
            load_bundle(path)

    def test_corrupt_header_json(self, tmp_path):
        path = tmp_path / "bad.sgm"
        header = b"{not json"
        path.write_bytes(BUNDLE_MAGIC + len(header).to_bytes(8, "little") + header)
        with pytest.raises(DataError, match="header"):
            load_bundle(path)

    def test_offset_mismatch_detected(self, tmp_path):
        path = tmp_path / "bundle.sgm"
        save_bundle(path, {}, {"a": np.ones(2), "b": np.ones(3)})
        data = bytearray(path.read_bytes())
        # shrink the first record by rewriting its extent, desynchronizing offsets
        idx = data.index(b"SGT1", 4)
        data[idx + 12:idx + 20] = (1).to_bytes(8, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_bundle(path)
