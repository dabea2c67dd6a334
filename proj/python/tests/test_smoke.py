import math

import numpy as np
import pytest

import ptl


def test_lab_round_trip():
    rng = np.random.default_rng(0)
    img = rng.random((5, 7, 3))
    back = ptl.lab_to_srgb(ptl.srgb_to_lab(img))
    assert np.abs(back - img).max() < 1e-9
    white = ptl.srgb_to_lab(np.ones((1, 1, 3)))[0, 0]
    assert white[0] == pytest.approx(100.0, abs=1e-9)


def test_exposure_shift_is_local():
    rng = np.random.default_rng(1)
    img = rng.random((8, 8, 3)) * 0.5 + 0.25
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:5, 2:5] = 1
    out = ptl.apply_exposure_shift(img, mask, 1.0)
    assert np.abs(out[mask == 0] - img[mask == 0]).max() < 1e-12
    assert ptl.srgb_to_lab(out)[3, 3, 0] > ptl.srgb_to_lab(img)[3, 3, 0]


def test_weibull_threshold_identity():
    assert ptl.weibull(0.25, t=0.25) == pytest.approx(0.75, abs=1e-12)
    assert ptl.inverse_threshold(0.75, t=0.4, beta=2.0) == pytest.approx(0.4, rel=1e-12)
    with pytest.raises(ValueError):
        ptl.weibull(0.1, t=-1.0)


def test_quest_and_fit_recover_a_threshold():
    rng = np.random.default_rng(2)
    q = ptl.Quest()
    xs, correct = [], []
    for _ in range(200):
        x = q.next()
        c = bool(rng.random() < ptl.weibull(x, t=0.3))
        q.update(x, c)
        xs.append(x)
        correct.append(c)
    assert q.trial_count == 200
    assert math.isclose(sum(q.posterior), 1.0, rel_tol=1e-9)
    t, beta = ptl.fit_weibull(xs, correct)
    assert abs(t - 0.3) / 0.3 < 0.25
    assert beta > 0


def test_all_correct_is_unfittable():
    with pytest.raises(ptl.UnfittableError):
        ptl.fit_weibull([0.1, 0.2, 0.3], [True, True, True])
    assert issubclass(ptl.UnfittableError, ptl.DataError)


def test_class_mask_and_synthetic_data():
    items = ptl.synthetic_dataset(count=3, size=16, seed=4)
    assert [it["id"] for it in items] == ["syn0000", "syn0001", "syn0002"]
    item = items[0]
    assert item["image"].shape == (16, 16, 3)
    neg, pos = item["thresholds"]
    assert neg < 0 < pos
    labels = ptl.make_class_mask(item["mask"], 2 * pos, neg, pos)
    assert set(np.unique(labels[item["mask"] == 1])) == {1}
    assert set(np.unique(labels[item["mask"] == 0])) == {2}
    assert set(np.unique(ptl.make_class_mask(item["mask"], 0.0, neg, pos))) == {2}


def test_oracle_sweep_and_model(tmp_path):
    item = ptl.synthetic_dataset(count=1, size=32, seed=5)[0]
    neg, pos = item["thresholds"]
    r = ptl.boundary_sweep(item["image"], item["mask"], neg, pos)
    step = r["x"][1] - r["x"][0]
    assert abs(r["boundary_neg"] - neg) <= step
    assert abs(r["boundary_pos"] - pos) <= step

    model = ptl.PtcModel(input_size=32, encoder_blocks=3, base_channels=2, multiscale_channels=2, seed=3)
    path = str(tmp_path / "ptc.ckpt")
    model.save(path)
    loaded = ptl.PtcModel.load(path)
    probs = loaded.predict(item["image"])
    assert probs.shape == (3, 32, 32)
    assert np.allclose(probs.sum(axis=0), 1.0)
    assert np.array_equal(probs, model.predict(item["image"]))
    swept = ptl.boundary_sweep(item["image"], item["mask"], neg, pos, model=loaded, grid_points=9)
    assert len(swept["f1_neg"]) == 9


def test_schedule():
    assert ptl.lr_at(0.0) == pytest.approx(1e-4, abs=1e-15)
    assert ptl.lr_at(5.0) == pytest.approx(9e-5, abs=1e-15)
