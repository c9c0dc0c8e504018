import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mstr.data import (
    Dataset,
    Sample,
    SyntheticSpec,
    batch_iter,
    feature_bytes,
    generate_raw,
    generate_synthetic_dataset,
    load_dataset_dir,
    matched_filter_predict,
    pad_to_multiple,
    padded_length,
    parse_feature_bytes,
    read_feature_file,
    read_manifest,
    write_dataset_dir,
    write_feature_file,
)
from mstr.errors import ConfigurationError, ContractError, FormatError

SMALL = SyntheticSpec(T_range=(30, 45), pattern_scales=(1, 3, 9), samples_per_class=20)


def oracle_accuracy(ds, split="train"):
    hits = [matched_filter_predict(s.features, s.valid_len, ds.templates) == s.label for s in ds[split]]
    return float(np.mean(hits))


# ---- padding

@pytest.mark.parametrize("T, expect", [(81, 81), (80, 81), (1, 81), (82, 162)])
def test_pad_lengths(T, expect):
    x = np.ones((T, 2), np.float32)
    out, n = pad_to_multiple(x, 3, 4)
    assert out.shape == (expect, 2) and n == T
    assert not out[T:].any() and np.array_equal(out[:T], x)
    assert padded_length(T, 3, 4) == expect


@given(st.integers(1, 200), st.integers(2, 4), st.integers(0, 4))
def test_padding_is_least_multiple(T, p, L):
    Tp = padded_length(T, p, L)
    assert Tp % p ** L == 0 and Tp >= T and Tp - p ** L < T


def test_pad_empty_rejected():
    with pytest.raises(ContractError):
        pad_to_multiple(np.zeros((0, 3)), 3, 2)


# ---- generator

def test_generator_deterministic_and_padded():
    a = generate_synthetic_dataset(SMALL, 3, 3, 2)
    b = generate_synthetic_dataset(SMALL, 3, 3, 2)
    for split in ("train", "val", "test"):
        for x, y in zip(a[split], b[split]):
            assert x.features.tobytes() == y.features.tobytes() and x.label == y.label
            assert x.features.shape[0] % 9 == 0
            assert not x.features[x.valid_len:].any()
            assert SMALL.T_range[0] <= x.valid_len <= SMALL.T_range[1]
    c = generate_synthetic_dataset(SMALL, 4, 3, 2)
    assert a["train"][0].features.tobytes() != c["train"][0].features.tobytes()


def test_splits_are_8_1_1_balanced_and_disjoint():
    ds = generate_synthetic_dataset(SyntheticSpec(T_range=(30, 40), pattern_scales=(1, 3, 9)), 0, 3, 2)
    assert [len(ds[s]) for s in ("train", "val", "test")] == [300, 36, 39]
    for split in ("train", "val", "test"):
        counts = np.bincount([s.label for s in ds[split]], minlength=3)
        assert counts.max() - counts.min() <= 1
    ids = [s.sample_id for split in ("train", "val", "test") for s in ds[split]]
    assert len(ids) == len(set(ids))
    feats = {s.features.tobytes() for split in ("train", "val", "test") for s in ds[split]}
    assert len(feats) == len(ids)


def test_template_lengths_follow_pattern_scales():
    _, templates = generate_raw(SMALL, 0)
    assert [t.shape[0] for t in templates] == [1, 3, 9]
    assert all(np.linalg.norm(t) == pytest.approx(SMALL.template_norm) for t in templates)


def test_noiseless_oracle_is_perfect():
    spec = dataclasses.replace(SMALL, noise_std=0.0)
    assert oracle_accuracy(generate_synthetic_dataset(spec, 0, 3, 2)) == 1.0


def test_oracle_degrades_with_noise():
    accs = []
    for noise in (0.0, 0.5, 1.0):
        spec = dataclasses.replace(SMALL, noise_std=noise)
        accs.append(np.mean([oracle_accuracy(generate_synthetic_dataset(spec, s, 3, 2)) for s in range(5)]))
    assert accs[0] >= accs[1] >= accs[2]


@pytest.mark.parametrize("kw", [dict(pattern_scales=(1, 50)), dict(T_range=(10, 5)), dict(num_classes=1),
                                dict(amplitude_rule="peak"), dict(noise_std=-1.0)])
def test_infeasible_specs_rejected(kw):
    with pytest.raises(ConfigurationError):
        generate_raw(dataclasses.replace(SMALL, **kw), 0)


# ---- MSF1

def test_msf_roundtrip_bitwise(tmp_path, rng):
    x = rng.standard_normal((7, 5)).astype(np.float32)
    write_feature_file(tmp_path / "a.msf", x)
    assert read_feature_file(tmp_path / "a.msf").tobytes() == x.tobytes()
    raw = (tmp_path / "a.msf").read_bytes()
    assert raw[:4] == b"MSF1" and len(raw) == 12 + 4 * 35


def test_msf_bad_magic():
    buf = feature_bytes(np.ones((2, 3), np.float32))
    with pytest.raises(FormatError, match="offset 0"):
        parse_feature_bytes(b"MSF2" + buf[4:])


def test_msf_truncated_payload():
    buf = feature_bytes(np.ones((2, 3), np.float32))[:12 + 5 * 4]
    with pytest.raises(FormatError, match="truncated"):
        parse_feature_bytes(buf)


def test_msf_dimension_overflow_and_trailing():
    import struct
    with pytest.raises(FormatError, match="overflow"):
        parse_feature_bytes(b"MSF1" + struct.pack("<II", 1 << 20, 1 << 12))
    with pytest.raises(FormatError, match="trailing"):
        parse_feature_bytes(feature_bytes(np.ones((1, 1), np.float32)) + b"\0")


@given(st.binary(max_size=40))
def test_msf_parser_never_crashes_on_garbage(buf):
    try:
        parse_feature_bytes(buf)
    except FormatError:
        pass


# ---- dataset directories

def test_directory_roundtrip(tmp_path):
    raw, _ = generate_raw(SMALL, 1)
    write_dataset_dir(tmp_path, raw, SMALL, 1)
    ds = load_dataset_dir(tmp_path, 3, 2)
    assert ds.num_classes == 3 and ds.input_dim == SMALL.input_dim
    for split in ("train", "val", "test"):
        got = {s.sample_id: s for s in ds[split]}
        for sid, feats, label in raw[split]:
            s = got[sid]
            assert s.label == label and s.features[:s.valid_len].tobytes() == feats.tobytes()
    assert read_manifest(tmp_path / "train" / "manifest.csv")[0][0].endswith(".msf")


def test_manifest_requires_header(tmp_path):
    (tmp_path / "m.csv").write_text("a.msf,0\n")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.csv")


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        load_dataset_dir("/nonexistent/dataset", 3, 2)


def test_padded_copy_repads(rng):
    s = Sample(rng.standard_normal((10, 2)).astype(np.float32), 10, 0, "a")
    ds = Dataset({"train": [s]}, 1, 2).padded(3, 2)
    assert ds["train"][0].features.shape == (18, 2) and ds["train"][0].valid_len == 10


# ---- batching

def samples(n):
    return [Sample(np.zeros((1, 1)), 1, 0, f"s{i:03d}") for i in range(n)]


def test_batch_sizes():
    assert [len(b) for b in batch_iter(samples(10), 3, shuffle_seed=0)] == [3, 3, 3, 1]


def test_batch_order_deterministic_and_permutation():
    xs = samples(17)
    a = [s.sample_id for b in batch_iter(xs, 4, 5) for s in b]
    b = [s.sample_id for b in batch_iter(list(reversed(xs)), 4, 5) for s in b]
    assert a == b
    assert sorted(a) == sorted(s.sample_id for s in xs)
    assert a != [s.sample_id for b in batch_iter(xs, 4, 6) for s in b]


@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 1000))
def test_batches_partition_the_dataset(n, bs, seed):
    ids = [s.sample_id for b in batch_iter(samples(n), bs, seed) for s in b]
    assert sorted(ids) == [f"s{i:03d}" for i in range(n)]


def test_batch_errors():
    with pytest.raises(ContractError):
        batch_iter([], 3)
    with pytest.raises(ContractError):
        batch_iter(samples(2), 0)
