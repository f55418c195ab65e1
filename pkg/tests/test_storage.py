import numpy as np
import pytest

from igauq.cache import CacheCorruption, DiskCache, make_key, settings_hash
from igauq.container import ContainerError, decode, encode, read_container, write_container


def sample_arrays():
    return {
        "c": np.arange(6, dtype=complex).reshape(2, 3) * (1 + 2j),
        "f": np.linspace(0, 1, 5),
        "i": np.array([3, 1, 2], dtype=np.int64),
        "big": np.arange(4, dtype=">f8"),
    }


def test_round_trip(tmp_path):
    arrays = sample_arrays()
    write_container(tmp_path / "a.bin", "test", {"level": 2}, arrays)
    kind, meta, out = read_container(tmp_path / "a.bin", kind="test")
    assert kind == "test" and meta == {"level": 2}
    for k, v in arrays.items():
        assert np.array_equal(out[k], v)
    assert out["big"].dtype == np.dtype("<f8")


def test_encoding_is_deterministic():
    assert encode("k", {"b": 1, "a": 2}, sample_arrays()) == encode("k", {"a": 2, "b": 1}, sample_arrays())
    assert encode("k", {}, sample_arrays())[:8] == b"IGAUQBIN"


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:10],
        lambda b: b"XXXXXXXX" + b[8:],
        lambda b: b[:8] + (99).to_bytes(4, "little") + b[12:],
        lambda b: b[:-1] + bytes([b[-1] ^ 1]),
        lambda b: b[:20] + b"\xff" + b[21:],
    ],
)
def test_corruption_detected(mutate):
    data = encode("k", {}, sample_arrays())
    with pytest.raises(ContainerError):
        decode(mutate(data))


def test_kind_mismatch(tmp_path):
    write_container(tmp_path / "a.bin", "one", {}, {})
    with pytest.raises(ContainerError):
        read_container(tmp_path / "a.bin", kind="two")


def test_no_partial_files_left(tmp_path):
    write_container(tmp_path / "a.bin", "k", {}, sample_arrays())
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.bin"]


def test_cache_round_trip(tmp_path):
    cache = DiskCache(tmp_path)
    key = make_key("geom", 1, "yhash", settings_hash({"kappa": 1.0}))
    assert cache.get(key) is None
    cache.put(key, {"u": np.ones(3, complex)})
    assert np.array_equal(cache.get(key)["u"], np.ones(3))
    assert cache.stats() == {"hits": 1, "misses": 1, "writes": 1}


def test_cache_key_sensitivity(tmp_path):
    cache = DiskCache(tmp_path)
    a = make_key("g", 0, "y", settings_hash({"kappa": 1.0}))
    b = make_key("g", 0, "y", settings_hash({"kappa": 2.0}))
    c = make_key("g", 1, "y", settings_hash({"kappa": 1.0}))
    assert len({cache.path(k) for k in (a, b, c)}) == 3


def test_cache_corruption(tmp_path):
    cache = DiskCache(tmp_path)
    key = make_key("g", 0, "y")
    cache.put(key, {"u": np.ones(3)})
    path = cache.path(key)
    with open(path, "r+b") as fh:
        fh.seek(-1, 2)
        fh.write(b"\x00")
    with pytest.raises(CacheCorruption):
        cache.get(key)


def test_cache_foreign_entry(tmp_path):
    cache = DiskCache(tmp_path)
    a, b = make_key("g", 0, "y1"), make_key("g", 0, "y2")
    cache.put(a, {"u": np.ones(1)})
    import shutil
    import os

    os.makedirs(os.path.dirname(cache.path(b)), exist_ok=True)
    shutil.copy(cache.path(a), cache.path(b))
    with pytest.raises(CacheCorruption):
        cache.get(b)
