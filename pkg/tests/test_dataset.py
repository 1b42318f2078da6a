import json

import numpy as np
import pytest

from roughslip import dataset as ds
from roughslip.errors import ConfigError, DatasetError
from roughslip.geometry import GpConfig
from roughslip.riesz import RieszPair, slip_amount


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = ds.DatasetConfig(K=100, J=128, seed=7)
    manifest = ds.generate_dataset(cfg, out)
    return cfg, out, manifest


def test_flat_sample_slip_is_line_offset(tmp_path):
    # segment ends sit 0.1 from the corners; J=512 resolves them to the 1e-6 target
    cfg = ds.DatasetConfig(K=1, J=512, gp=GpConfig(variance=0.0))
    ds.generate_dataset(cfg, tmp_path)
    (s,), manifest = ds.load_dataset(tmp_path)
    assert manifest["skipped"] == 0
    curve = s.curve
    h = np.stack([curve.x[:, 1], np.zeros(curve.J)], axis=1)
    pair = RieszPair(s.r1, s.r2, s.rt1, s.rt2, curve, s.segment)
    assert slip_amount(pair, h) == pytest.approx(s.meta["line_offset"], abs=1e-6)


def test_generation_is_byte_identical(small, tmp_path):
    cfg, out, manifest = small
    again = ds.generate_dataset(cfg, tmp_path)
    assert (tmp_path / ds.DATA).read_bytes() == (out / ds.DATA).read_bytes()
    assert again["crc64"] == manifest["crc64"]
    assert again["samples"] == manifest["samples"]


def test_resume_after_interruption(small, tmp_path):
    cfg, out, manifest = small

    class Stop(Exception):
        pass

    def progress(n, K):
        if n == 60:
            raise Stop

    with pytest.raises(Stop):
        ds.generate_dataset(cfg, tmp_path, progress=progress)
    assert (tmp_path / "data.part").exists()
    resumed = ds.generate_dataset(cfg, tmp_path)
    assert resumed["crc64"] == manifest["crc64"]


def test_round_trip_is_bitwise(small):
    cfg, out, manifest = small
    samples, m = ds.load_dataset(out)
    raw = np.frombuffer((out / ds.DATA).read_bytes()[:-8], dtype="<f8").reshape(cfg.K, cfg.J, ds.N_CH)
    assert np.array_equal(np.stack([s.data for s in samples]), raw)
    assert m == manifest


def test_curve_rebuilt_exactly_from_metadata(small):
    _, out, _ = small
    samples, _ = ds.load_dataset(out)
    for s in samples[:5]:
        assert np.array_equal(s.curve.x, s.data[:, 0:2])
        assert np.array_equal(s.curve.dx, s.data[:, 2:4])


def test_corrupt_byte_detected(small, tmp_path):
    _, out, _ = small
    for name in (ds.MANIFEST, ds.DATA):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    raw = bytearray((tmp_path / ds.DATA).read_bytes())
    raw[1234] ^= 0x01
    (tmp_path / ds.DATA).write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="checksum"):
        ds.load_dataset(tmp_path)


def test_truncated_file_detected(small, tmp_path):
    _, out, _ = small
    (tmp_path / ds.MANIFEST).write_bytes((out / ds.MANIFEST).read_bytes())
    (tmp_path / ds.DATA).write_bytes((out / ds.DATA).read_bytes()[:-100])
    with pytest.raises(DatasetError, match="truncated"):
        ds.load_dataset(tmp_path)


def test_version_mismatch_detected(small, tmp_path):
    _, out, _ = small
    m = json.loads((out / ds.MANIFEST).read_text())
    m["version"] = "RWS0"
    (tmp_path / ds.MANIFEST).write_text(json.dumps(m))
    with pytest.raises(DatasetError, match="version"):
        ds.load_dataset(tmp_path)


def test_split_sizes():
    train, test = ds.make_split(2000, 0.1, 0)
    assert len(train) == 1800 and len(test) == 200
    assert not set(train) & set(test)
    assert sorted(np.concatenate([train, test])) == list(range(2000))


def test_normalization_statistics(small):
    _, out, manifest = small
    arr = ds.load_array(out)
    train, _ = ds.split(manifest)
    z = ds.normalize(arr[train], manifest).reshape(-1, ds.N_CH)
    assert np.max(np.abs(z.mean(axis=0))) <= 1e-10
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_spot_check_duality(small):
    _, out, _ = small
    samples, _ = ds.load_dataset(out)
    assert ds.spot_check(samples, fraction=0.05, seed=1) <= 1e-8


def test_sine_family(tmp_path):
    cfg = ds.DatasetConfig.sine(K=3, J=128, seed=2)
    ds.generate_dataset(cfg, tmp_path)
    samples, manifest = ds.load_dataset(tmp_path)
    assert manifest["config"]["family"] == "sine"
    assert ds.spot_check(samples, fraction=1.0, seed=0, n_data=1) <= 1e-8


def test_config_validation():
    with pytest.raises(ConfigError):
        ds.DatasetConfig(J=127)
    with pytest.raises(ConfigError):
        ds.DatasetConfig(line_offset_range=(0.1, 0.6))
    with pytest.raises(ConfigError):
        ds.DatasetConfig(family="fractal")


@pytest.mark.slow
def test_desk_scale_statistics(gp_artifacts):
    # second, independent pass over the stored file for the train-split statistics
    m = gp_artifacts.manifest
    raw = np.fromfile(gp_artifacts.path / ds.DATA, dtype="<f8", count=m["K"] * m["J"] * ds.N_CH)
    arr = raw.reshape(m["K"], m["J"], ds.N_CH)
    train = np.asarray(m["split"]["train"])
    std = np.array([np.std(arr[train, :, c]) for c in range(ds.N_CH)])
    np.testing.assert_allclose(m["stats"]["std"], std, rtol=0.1)
    assert m["K"] == 2000 and len(train) == 1800
