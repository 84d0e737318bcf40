"""Vendor normalization: units, resampling, speed derivation, file ingestion."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrcast.datamodel import wearable_registry
from hrcast.ingest import (
    RawSession,
    VendorSchema,
    convert_units,
    default_schemas,
    derive_speed,
    ingest_directory,
    normalize_session,
    read_schema,
    read_session_file,
    resample_uniform,
    write_schema,
)


# ---------------------------------------------------------------------------
# unit conversion


def test_mph_to_mps_exact():
    assert convert_units(1.0, "mph", "m/s") == 0.44704


def test_mile_to_metre_exact():
    assert convert_units(1.0, "mi", "m") == 1609.344


def test_fahrenheit_freezing_point():
    assert convert_units(32.0, "F", "C") == pytest.approx(0.0, abs=1e-12)
    assert convert_units(212.0, "F", "C") == pytest.approx(100.0, abs=1e-12)


def test_identity_conversion():
    assert convert_units(7.5, "m/s", "m/s") == 7.5


def test_unknown_conversion_lists_known_pairs():
    with pytest.raises(ValueError, match="mph->m/s"):
        convert_units(1.0, "furlong", "m")


@given(st.sampled_from([("mph", "m/s"), ("mi", "m"), ("ft", "m"), ("F", "C"),
                        ("km/h", "m/s"), ("kJ", "kcal")]),
       st.floats(-1e4, 1e4))
@settings(max_examples=60, deadline=None)
def test_conversion_composed_with_inverse_is_identity(pair, value):
    raw, canon = pair
    there = convert_units(value, raw, canon)
    back = convert_units(there, canon, raw)
    assert back == pytest.approx(value, abs=1e-12 * max(1.0, abs(value)))


def test_conversion_vectorized():
    out = convert_units(np.array([0.0, 1.0, 2.0]), "mph", "m/s")
    np.testing.assert_allclose(out, [0.0, 0.44704, 0.89408], rtol=0, atol=0)


# ---------------------------------------------------------------------------
# resampling


def test_resample_five_second_span():
    grid, vals = resample_uniform([0, 5], [60, 70])
    np.testing.assert_array_equal(grid, [0, 1, 2, 3, 4, 5])
    np.testing.assert_allclose(vals, [60, 62, 64, 66, 68, 70], rtol=1e-12)


def test_resample_uniform_input_unchanged():
    t = np.arange(10.0)
    v = np.sin(t)
    grid, vals = resample_uniform(t, v)
    np.testing.assert_array_equal(grid, t)
    np.testing.assert_array_equal(vals, v)


def test_resample_preserves_interior_peak():
    grid, vals = resample_uniform([0, 5, 10], [0, 10, 0])
    assert vals[5] == 10.0
    np.testing.assert_allclose(vals[:6], [0, 2, 4, 6, 8, 10], rtol=1e-12)
    np.testing.assert_allclose(vals[5:], vals[5::-1][:6], rtol=1e-12)  # symmetric ramp


def test_resample_rejects_duplicate_timestamps():
    with pytest.raises(ValueError, match="duplicate"):
        resample_uniform([0, 1, 1, 2], [0, 1, 2, 3])


def test_resample_needs_two_samples():
    with pytest.raises(ValueError):
        resample_uniform([0], [1])


# ---------------------------------------------------------------------------
# derived speed


def test_derive_speed_constant_increments():
    np.testing.assert_array_equal(derive_speed([0, 3, 6]), [3, 3, 3])


def test_derive_speed_constant_distance_is_zero():
    np.testing.assert_array_equal(derive_speed([5, 5, 5, 5]), [0, 0, 0, 0])


def test_derive_speed_mixed_increments():
    np.testing.assert_array_equal(derive_speed([0, 2, 2, 5]), [2, 2, 0, 3])


def test_derive_speed_clamps_negative_increment_and_flags():
    report = {}
    out = derive_speed([0, 4, 3, 6], report=report)
    np.testing.assert_array_equal(out, [4, 4, 0, 3])
    assert report["negative_distance_increments"] == 1


# ---------------------------------------------------------------------------
# schemas


def test_default_schemas_cover_four_vendors():
    schemas = default_schemas()
    assert set(schemas) == {"fitrec", "coros", "garmin", "huawei"}
    assert schemas["huawei"].period_s == 5.0
    for name in ("fitrec", "coros", "garmin"):
        assert schemas[name].period_s == 1.0
    assert schemas["fitrec"].derive_speed  # derived speed is the canonical speed


def test_every_schema_maps_a_heart_rate_column():
    for schema in default_schemas().values():
        targets = {canon for _, canon in schema.columns.values()}
        assert "heart_rate" in targets


def test_schema_channels_exist_in_registry():
    reg = wearable_registry()
    for schema in default_schemas().values():
        for _, canon in schema.columns.values():
            if canon != "heart_rate":
                assert canon in reg.units, canon


def test_schema_file_roundtrip(tmp_path):
    schema = default_schemas()["huawei"]
    write_schema(tmp_path / "huawei.schema", schema)
    again = read_schema(tmp_path / "huawei.schema")
    assert again.vendor == "huawei"
    assert again.period_s == 5.0
    assert again.columns == schema.columns
    assert again.derive_speed == schema.derive_speed


def test_schema_rejects_nonpositive_period():
    with pytest.raises(ValueError):
        VendorSchema(vendor="x", period_s=0.0, timestamp_column="t", columns={})


# ---------------------------------------------------------------------------
# session files


def write_session_file(path, meta, header, rows):
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k} = {v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def test_read_session_file(tmp_path):
    path = tmp_path / "a.csv"
    write_session_file(path, {"user_id": "u9", "sport": "run", "gender": "f"},
                       ["timestamp", "speed", "heart_rate"],
                       [[0, 3.0, 110], [1, 3.1, 112], [2, 3.0, 113]])
    raw = read_session_file(path)
    assert raw.user_id == "u9"
    assert raw.sport == "run"
    assert raw.gender == "f"
    np.testing.assert_array_equal(raw.timestamps, [0, 1, 2])
    np.testing.assert_array_equal(raw.columns["heart_rate"], [110, 112, 113])


def test_read_session_file_requires_timestamps(tmp_path):
    path = tmp_path / "b.csv"
    write_session_file(path, {}, ["speed", "heart_rate"], [[3.0, 110], [3.1, 111]])
    with pytest.raises(ValueError, match="timestamp"):
        read_session_file(path)


def test_raw_session_rejects_nonincreasing_timestamps():
    with pytest.raises(ValueError):
        RawSession(vendor="v", user_id="u", sport="run", gender="", start_time=0.0,
                   timestamps=np.array([0.0, 2.0, 1.0]),
                   columns={"heart_rate": np.zeros(3)})


# ---------------------------------------------------------------------------
# normalization


def huawei_raw(n=10, period=5.0, extra=None):
    """A Huawei-style recording: 5 s sampling, speed in mph."""
    t = np.arange(n) * period
    columns = {
        "speed_mph": np.full(n, 10.0),
        "altitude": np.linspace(100, 110, n),
        "heart_rate": np.linspace(100, 140, n),
    }
    if extra:
        columns.update(extra)
    return RawSession(vendor="huawei", user_id="u1", sport="run", gender="",
                      start_time=0.0, timestamps=t, columns=columns)


def test_huawei_mph_resampled_to_mps_at_one_second():
    reg = wearable_registry()
    sessions = normalize_session(huawei_raw(), default_schemas()["huawei"], reg)
    assert len(sessions) == 1
    sess = sessions[0]
    assert sess.channels.shape[1] == 46  # spans 0..45 s inclusive
    si = reg.index("speed")
    assert sess.observed[si]
    np.testing.assert_allclose(sess.channels[si], 10.0 * 0.44704, rtol=1e-12)
    np.testing.assert_allclose(sess.hr, np.linspace(100, 140, 46), rtol=1e-12)


def test_missing_channels_zero_with_observed_false():
    reg = wearable_registry()
    sess = normalize_session(huawei_raw(), default_schemas()["huawei"], reg)[0]
    ti = reg.index("temperature")
    assert not sess.observed[ti]
    np.testing.assert_array_equal(sess.channels[ti], 0.0)
    observed_names = {reg.names[i] for i in np.flatnonzero(sess.observed)}
    assert observed_names == {"speed", "altitude"}


def test_unmapped_column_warns_and_skips():
    reg = wearable_registry()
    report = {}
    with pytest.warns(UserWarning, match="mystery"):
        normalize_session(huawei_raw(extra={"mystery": np.zeros(10)}),
                          default_schemas()["huawei"], reg, report)
    assert report["columns_skipped"] == 1


def test_missing_heart_rate_is_an_error():
    raw = huawei_raw()
    del raw.columns["heart_rate"]
    with pytest.raises(ValueError, match="heart-rate"):
        normalize_session(raw, default_schemas()["huawei"], wearable_registry())


def test_gap_over_thirty_seconds_splits_session():
    t = np.concatenate([np.arange(40.0), np.arange(40.0) + 100.0])  # 60 s gap
    raw = RawSession(vendor="coros", user_id="u1", sport="bike", gender="",
                     start_time=0.0, timestamps=t,
                     columns={"speed": np.full(80, 5.0),
                              "heart_rate": np.full(80, 120.0)})
    sessions = normalize_session(raw, default_schemas()["coros"], wearable_registry())
    assert len(sessions) == 2
    assert sessions[1].start_time == 100.0


def test_short_gap_is_interpolated_not_split():
    t = np.array([0, 1, 2, 3, 13, 14, 15, 16], float)  # 10 s hop
    raw = RawSession(vendor="coros", user_id="u1", sport="bike", gender="",
                     start_time=0.0, timestamps=t,
                     columns={"speed": np.array([5, 5, 5, 5, 10, 10, 10, 10], float),
                              "heart_rate": np.full(8, 120.0)})
    sessions = normalize_session(raw, default_schemas()["coros"], wearable_registry())
    assert len(sessions) == 1
    assert sessions[0].channels.shape[1] == 17


def test_fitrec_uses_derived_speed_over_raw():
    reg = wearable_registry()
    t = np.arange(20.0)
    raw = RawSession(vendor="fitrec", user_id="u1", sport="run", gender="m",
                     start_time=0.0, timestamps=t,
                     columns={"distance": t * (2.0 / 1609.344),  # 2 m per second, in miles
                              "speed": np.full(20, 10.0),        # mph; should not win
                              "heart_rate": np.full(20, 130.0)})
    report = {}
    sess = normalize_session(raw, default_schemas()["fitrec"], reg, report)[0]
    np.testing.assert_allclose(sess.channels[reg.index("speed")], 2.0, rtol=1e-9)
    assert report["speed_source"] == "derived"
    # the raw mph column is preserved under its own name
    np.testing.assert_allclose(sess.channels[reg.index("raw_speed")], 10.0 * 0.44704,
                               rtol=1e-12)


def test_enhanced_speed_fills_missing_speed_column():
    reg = wearable_registry()
    t = np.arange(10.0)
    raw = RawSession(vendor="coros", user_id="u1", sport="run", gender="",
                     start_time=0.0, timestamps=t,
                     columns={"enhanced_speed": np.full(10, 4.5),
                              "heart_rate": np.full(10, 120.0)})
    report = {}
    sess = normalize_session(raw, default_schemas()["coros"], reg, report)[0]
    np.testing.assert_allclose(sess.channels[reg.index("speed")], 4.5, rtol=1e-12)
    assert report["speed_source"] == "enhanced"


# ---------------------------------------------------------------------------
# directory ingestion


def write_vendor_dir(tmp_path, n_files=3, length=950):
    d = tmp_path / "exports"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n_files):
        t = np.arange(length, dtype=float)
        rows = np.column_stack([t, np.abs(rng.normal(3, 1, length)),
                                np.linspace(100, 150, length),
                                rng.uniform(110, 150, length)])
        write_session_file(d / f"sess{i}.csv",
                           {"user_id": f"u{i % 2}", "sport": "run"},
                           ["timestamp", "speed", "altitude", "heart_rate"],
                           rows.tolist())
    return d


def test_ingest_directory_counts_and_store(tmp_path):
    d = write_vendor_dir(tmp_path)
    out = tmp_path / "store"
    segments, report = ingest_directory(d, default_schemas()["coros"],
                                        window=450, out_path=out)
    assert report["files"] == 3
    assert report["segments"] == len(segments) == 6  # 950 → 2 windows each
    assert report["per_sport"] == {"run": 6}
    assert out.exists()
    assert (tmp_path / "store.report.json").exists()


def test_ingest_directory_requires_files(tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    with pytest.raises(ValueError, match="no session files"):
        ingest_directory(empty, default_schemas()["coros"])


def test_ingest_directory_deterministic(tmp_path):
    d = write_vendor_dir(tmp_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    ingest_directory(d, default_schemas()["coros"], window=450, out_path=out1)
    ingest_directory(d, default_schemas()["coros"], window=450, out_path=out2)
    assert out1.read_bytes() == out2.read_bytes()
