"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import cyclegc


def test_phantom_determinism_and_shapes():
    a = cyclegc.generate_phantom(7, 64, 64, 0.0)
    b = cyclegc.generate_phantom(7, 64, 64, 0.0)
    assert a["ct"].shape == (64, 64)
    assert np.array_equal(a["ct"], b["ct"])
    assert np.array_equal(a["labels"], b["labels"])
    assert set(np.unique(a["labels"])) <= {0, 1, 2, 3, 4}
    c = cyclegc.generate_phantom(8, 64, 64, 0.0)
    assert not np.array_equal(a["labels"], c["labels"])
    assert a["ct"].min() >= 0.0 and a["ct"].max() <= 255.0


def test_split_disjoint():
    s = cyclegc.make_unpaired_split(12, 3, size=64, slices_per_subject=2)
    assert set(s["ct_subjects"]).isdisjoint(s["mr_subjects"])
    assert set(s["test_subjects"]).isdisjoint(set(s["ct_subjects"]) | set(s["mr_subjects"]))
    assert len(s["ct_train"]) > 0 and s["ct_train"][0].shape == (64, 64)


def test_normalization():
    raw = np.array([[-150.0, 350.0], [100.0, -1000.0]])
    out = cyclegc.normalize_ct(raw)
    assert out[0, 0] == pytest.approx(0.0)
    assert out[0, 1] == pytest.approx(255.0)
    assert out[1, 0] == pytest.approx(127.5)
    assert out[1, 1] == 0.0
    with pytest.raises(ValueError):
        cyclegc.normalize_mr(np.array([[np.nan]]))


def test_metrics():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 255, (16, 16))
    assert cyclegc.ncc(a, a) == pytest.approx(1.0)
    assert cyclegc.gradient_correlation(a, 2.0 * a + 5.0) == pytest.approx(1.0)
    assert cyclegc.mae(a, a + 10.0) == pytest.approx(10.0)
    assert cyclegc.psnr(a, a + 1.0) == pytest.approx(20.0 * math.log10(255.0), abs=1e-6)
    assert math.isinf(cyclegc.psnr(a, a))

    two_level = np.zeros((4, 4))
    two_level[:2, :] = 255.0
    assert cyclegc.mutual_information(two_level, two_level, bins=2) == pytest.approx(
        math.log(2.0)
    )

    p = np.zeros((4, 4), dtype=np.int32)
    p[0, :2] = 1
    assert cyclegc.dice(p, p, 1) == 1.0


def test_losses_and_schedule():
    ones = [np.ones((3, 3))]
    zeros = [np.zeros((3, 3))]
    assert cyclegc.adv_loss_discriminator(ones, zeros) == pytest.approx(0.0)
    assert cyclegc.adv_loss_generator(zeros) == pytest.approx(1.0)
    b = cyclegc.total_loss(1.0, 1.0, 1.0, 1.0)
    assert b["total"] == pytest.approx(5.3)

    assert cyclegc.lr_at(0) == 2e-4
    assert cyclegc.lr_at(100000) == 2e-4
    assert cyclegc.lr_at(150000) == 1e-4
    assert cyclegc.lr_at(200000) == 0.0


def test_training_and_segmentation_pipeline(tmp_path):
    split = cyclegc.make_unpaired_split(6, 11, size=32, slices_per_subject=2)
    result = cyclegc.train_synthesis(
        split["ct_train"],
        split["mr_train"],
        str(tmp_path / "run"),
        total_iterations=6,
        fixed_phase_iterations=3,
        checkpoint_interval=3,
        gen_base_width=4,
        disc_base_width=4,
        seed=5,
    )
    ckpt = result["final_checkpoint"]
    assert math.isfinite(result["last_total"])

    test_mr = [t["mr"] for t in split["paired_test"]]
    synth = cyclegc.synthesize(ckpt, test_mr, "mr2ct")
    assert len(synth) == len(test_mr)
    assert synth[0].shape == test_mr[0].shape
    assert synth[0].min() >= 0.0 and synth[0].max() <= 255.0

    ct_samples = [cyclegc.generate_phantom(9000 + i, 32, 32) for i in range(3)]
    seg = cyclegc.train_segmenter(
        [s["ct"] for s in ct_samples],
        [s["labels"] for s in ct_samples],
        ckpt,
        str(tmp_path / "unet.bin"),
        iterations=5,
        base_width=4,
        seed=2,
    )
    preds = cyclegc.segment_mr(seg["model"], ckpt, [ct_samples[0]["mr"]])
    assert preds[0].shape == (32, 32)
    assert preds[0].min() >= 0 and preds[0].max() <= 4
