import dataclasses

import numpy as np
import pytest

from fistanet.errors import FormatError, GenerationError
from fistanet.phantoms import (
    CirclePhantomSpec,
    add_noise_snr,
    build_dataset,
    circle_source,
    ellipse_source,
    gen_circle_phantom,
    gen_ellipse_phantom,
    load_dataset,
    save_dataset,
)
from fistanet.rng import Rng


def test_circle_phantom_values_in_range():
    spec = CirclePhantomSpec()
    rng = Rng(1)
    for _ in range(20):
        img = gen_circle_phantom(rng, spec, 32)
        vals = np.unique(img[img > 0])
        assert len(vals) >= 1
        assert vals.min() > 0.05 and vals.max() < 0.5


def test_circle_phantom_stays_inside_sensing_disc():
    spec = CirclePhantomSpec()
    rng = Rng(2)
    size = 32
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    outside = (xx - c) ** 2 + (yy - c) ** 2 > (size / 2.0 - 1) ** 2
    for _ in range(20):
        img = gen_circle_phantom(rng, spec, size)
        assert np.all(img[outside] == 0.0)
        assert img[0, :].max() == 0.0 and img[-1, :].max() == 0.0
        assert img[:, 0].max() == 0.0 and img[:, -1].max() == 0.0


def test_circle_phantom_object_counts():
    spec = CirclePhantomSpec(n_objects=(3,))
    img = gen_circle_phantom(Rng(3), spec, 32)
    assert img.max() > 0


def test_circle_phantom_size_precondition():
    with pytest.raises(Exception):
        gen_circle_phantom(Rng(1), CirclePhantomSpec(), 8)


def test_circle_phantom_infeasible_spec_errors():
    # radii too large to fit disjointly inside the sensing disc
    spec = CirclePhantomSpec(
        n_objects=(4,), radius_range=(0.45, 0.49), non_overlap=True, max_attempts=50
    )
    with pytest.raises(GenerationError):
        gen_circle_phantom(Rng(5), spec, 32)


def test_ellipse_phantom_contracts():
    img = gen_ellipse_phantom(Rng(4), 0, 32)
    assert np.all(img == 0.0)
    a = gen_ellipse_phantom(Rng(9), 4, 32)
    b = gen_ellipse_phantom(Rng(9), 4, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a.max() > 0.0


def test_noise_exact_snr():
    b = Rng(6).normal(64)
    for snr in (40.0, 22.0):
        noisy = add_noise_snr(Rng(7), b, snr)
        eps = noisy - b
        realized = 10.0 * np.log10(np.sum(b * b) / np.sum(eps * eps))
        assert abs(realized - snr) < 1e-10
        assert np.linalg.norm(eps) > 0.0


def test_noise_infinite_snr_is_identity():
    b = Rng(8).normal(32)
    out = add_noise_snr(Rng(9), b, np.inf)
    assert np.array_equal(out, b)
    out2 = add_noise_snr(Rng(9), b, None)
    assert np.array_equal(out2, b)


def test_noise_zero_signal_errors():
    with pytest.raises(GenerationError):
        add_noise_snr(Rng(1), np.zeros(8), 40.0)


def test_build_dataset_determinism_and_meta(small_emt_op):
    src = circle_source(CirclePhantomSpec(), 16)
    a = build_dataset(Rng(77), small_emt_op, src, 6, 40.0)
    b = build_dataset(Rng(77), small_emt_op, src, 6, 40.0)
    assert len(a) == 6
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.measurement, sb.measurement)
        assert np.array_equal(sa.ground_truth, sb.ground_truth)
    counts = {s.meta["n_objects"] for s in a}
    assert counts <= {1, 2, 4}
    for s in a:
        clean = small_emt_op.apply(s.ground_truth)
        assert np.linalg.norm(s.measurement - clean) > 0.0
        assert s.measurement.shape == (small_emt_op.out_size,)


def test_dataset_roundtrip(tmp_path, small_emt_op):
    src = circle_source(CirclePhantomSpec(), 16)
    samples = build_dataset(Rng(78), small_emt_op, src, 4, 40.0)
    d = tmp_path / "ds"
    save_dataset(d, samples)
    back = load_dataset(d)
    assert len(back) == 4
    for s, t in zip(samples, back):
        assert np.array_equal(s.measurement, t.measurement)
        assert np.array_equal(s.ground_truth, t.ground_truth)
        assert t.meta["n_objects"] == s.meta["n_objects"]


def test_dataset_save_is_byte_deterministic(tmp_path, small_emt_op):
    src = circle_source(CirclePhantomSpec(), 16)
    samples = build_dataset(Rng(79), small_emt_op, src, 3, 40.0)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    save_dataset(d1, samples)
    save_dataset(d2, samples)
    for f1 in sorted(d1.iterdir()):
        f2 = d2 / f1.name
        assert f1.read_bytes() == f2.read_bytes()


def test_load_missing_manifest(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    with pytest.raises(FormatError):
        load_dataset(d)


def test_load_count_mismatch(tmp_path, small_emt_op):
    src = circle_source(CirclePhantomSpec(), 16)
    samples = build_dataset(Rng(80), small_emt_op, src, 3, 40.0)
    d = tmp_path / "ds"
    save_dataset(d, samples)
    manifest = (d / "manifest.txt").read_text().splitlines()
    manifest[0] = "n_samples=5"
    (d / "manifest.txt").write_text("\n".join(manifest) + "\n")
    with pytest.raises(FormatError):
        load_dataset(d)


def test_ellipse_source_plugs_into_build():
    from fistanet.operators import synth_emt_operator

    op = synth_emt_operator(Rng(5), 48, 32)
    samples = build_dataset(Rng(81), op, ellipse_source(3, 32), 2, np.inf)
    for s in samples:
        clean = op.apply(s.ground_truth)
        assert np.array_equal(s.measurement, clean)
