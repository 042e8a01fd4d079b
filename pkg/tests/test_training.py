import numpy as np
import pytest

from gdce.errors import DataError
from gdce.models import GdceConfig, build_discriminator, build_extractor, build_gdce
from gdce.nn import max_rel_error, numeric_gradient
from gdce.synth import ShiftProfile, SynthSpec, generate_dataset, generate_image, shift_curve
from gdce.training import (
    ArrayDataset,
    LossTerms,
    ReferencePool,
    TrainConfig,
    ablation_grid,
    crossval_run,
    enhance_batch,
    gdce_loss,
    gdce_loss_on_refs,
    load_dataset,
    render_ablation_grid,
    train_discriminator,
    train_gdce,
)


def _tiny_data(num_classes=2, per_class=10, size=16, seed=0, domain=0, profile=None):
    spec = SynthSpec(num_classes=num_classes, images_per_class=per_class,
                     image_size=size, seed=seed)
    xs, ys, fs = [], [], []
    for cls in range(num_classes):
        for idx in range(per_class):
            v = generate_image(spec, domain, cls, idx).values
            if profile is not None:
                v = shift_curve(v, profile)
            xs.append(v.astype(np.float32))
            ys.append(cls)
            fs.append(idx % 5)
    return ArrayDataset(np.stack(xs)[:, None], np.asarray(ys, dtype=np.int64),
                        np.asarray(fs, dtype=np.int64), list("AB"[:num_classes]))


def _tiny_config(**kw):
    base = dict(lr=1e-3, batch_size=6, epochs=2, seed=0, image_size=16,
                n_iterations=4, num_blocks=2)
    base.update(kw)
    return TrainConfig(**base)


def _frozen_nets(size=16, num_classes=2, dtype=np.float32):
    disc = build_discriminator(num_classes, size, seed=1, channels=(4, 4),
                               dense_hidden=8, dtype=dtype)
    disc.frozen = True
    ext = build_extractor(tap=1, depth=2, channels=4, seed=2, dtype=dtype)
    return disc, ext


def test_loss_terms_sum_exactly():
    t = LossTerms.of(0.1, 0.2)
    assert t.total == 0.1 + 0.2
    with pytest.raises(ValueError):
        LossTerms(ce=0.1, perceptual=0.2, total=0.31)
    with pytest.raises(ValueError):
        LossTerms.of(-0.1, 0.2)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fold=5)
    with pytest.raises(ValueError):
        TrainConfig(perceptual_reduction="median")


def test_dataset_fold_split():
    ds = _tiny_data(per_class=10)
    train, val = ds.split_fold(4)
    assert len(train) == 16 and len(val) == 4
    assert (val.folds == 4).all() and (train.folds != 4).all()
    with pytest.raises(DataError):
        ds.subset(ds.folds == 0).split_fold(1)  # fold absent
    with pytest.raises(DataError):
        ds.subset(ds.folds == 0).split_fold(0)  # nothing left to train on


def test_load_dataset_from_manifest(tmp_path):
    spec = SynthSpec(num_classes=2, images_per_class=5, image_size=32, seed=1)
    manifest = generate_dataset(spec, tmp_path)
    ds = load_dataset(manifest)
    assert ds.x.shape == (10, 1, 32, 32) and ds.x.dtype == np.float32
    assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0
    assert ds.class_names == ["A", "B"]
    assert sorted(np.unique(ds.y)) == [0, 1]


def test_reference_pool_scanner_contract(tmp_path):
    spec = SynthSpec(num_classes=2, images_per_class=5, image_size=32, seed=2)
    ref = generate_dataset(spec, tmp_path / "ref")
    pool = ReferencePool.from_manifest(ref)
    assert len(pool) == 10
    drawn = pool.draw(np.random.default_rng(0), 4)
    assert drawn.shape == (4, 1, 32, 32)
    shifted = generate_dataset(spec, tmp_path / "shifted", scanner_id="shifted",
                               domain_code=1)
    with pytest.raises(DataError):
        ReferencePool.from_manifest(shifted)
    with pytest.raises(DataError):
        ReferencePool(np.zeros((0, 1, 8, 8), dtype=np.float32))


def test_gdce_loss_requires_frozen_auxiliaries():
    ds = _tiny_data()
    disc, ext = _frozen_nets()
    gdce = build_gdce(GdceConfig(num_blocks=2, n_iterations=4, image_size=16), seed=0)
    pool = ReferencePool(ds.x[:4])
    rng = np.random.default_rng(0)
    disc.frozen = False
    with pytest.raises(ValueError):
        gdce_loss(ds.x[:2], ds.y[:2], gdce, disc, ext, pool, rng)
    disc.frozen = True
    ext.net.frozen = False
    with pytest.raises(ValueError):
        gdce_loss(ds.x[:2], ds.y[:2], gdce, disc, ext, pool, rng)


def test_perceptual_term_vanishes_when_reference_equals_output():
    ds = _tiny_data()
    disc, ext = _frozen_nets()
    gdce = build_gdce(GdceConfig(num_blocks=2, n_iterations=4, image_size=16), seed=0)
    head = gdce.layers[-2]
    head.weight.data[:] = 0
    head.bias.data[:] = 0  # identity enhancement: output == input
    terms = gdce_loss_on_refs(ds.x[:3], ds.y[:3], gdce, disc, ext, refs=ds.x[:3])
    assert terms.perceptual == 0.0
    assert terms.total == terms.ce


def test_gradients_reach_gdce_only():
    ds = _tiny_data()
    disc, ext = _frozen_nets()
    gdce = build_gdce(GdceConfig(num_blocks=2, n_iterations=4, image_size=16), seed=0)
    pool = ReferencePool(ds.x[:4])
    gdce_loss(ds.x[:3], ds.y[:3], gdce, disc, ext, pool, np.random.default_rng(1))
    assert all(p.grad is not None for p in gdce.params())
    assert all(p.grad is None for p in disc.params())
    assert all(p.grad is None for p in ext.net.params())


def test_composite_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    cfg = GdceConfig(num_blocks=1, conv_channels=2, n_iterations=2,
                     dense_sizes=(8, 4), image_size=16)
    gdce = build_gdce(cfg, seed=4, dtype=np.float64)
    disc = build_discriminator(2, 16, seed=5, channels=(2, 2), dense_hidden=4,
                               dtype=np.float64)
    disc.frozen = True
    ext = build_extractor(tap=1, depth=2, channels=2, seed=6, dtype=np.float64)
    batch = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))
    labels = np.array([0, 1])
    refs = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))

    def total():
        return gdce_loss_on_refs(batch, labels, gdce, disc, ext, refs).total

    gdce_loss_on_refs(batch, labels, gdce, disc, ext, refs)
    # tiny h: the batch L1 term has sign kinks and a wide window would cross them
    for layer_idx in (0, len(gdce.layers) - 2):  # first conv and the head
        for p in gdce.layers[layer_idx].params():
            analytic = p.grad.copy()
            numeric = numeric_gradient(total, p.data, h=1e-6)
            assert max_rel_error(analytic, numeric) < 1e-4


def test_train_discriminator_runs_and_freezes():
    ds = _tiny_data(per_class=15, size=16, seed=3)
    result = train_discriminator(ds, _tiny_config(epochs=3))
    assert result.net.frozen
    assert len(result.history) == 3
    assert result.best_metric == max(r["worst_group"] for r in result.history)
    assert 0 <= result.best_epoch < 3


def test_train_discriminator_rejects_single_class():
    ds = _tiny_data()
    only_a = ds.subset(ds.y == 0)
    with pytest.raises(DataError):
        train_discriminator(only_a, _tiny_config())


def test_interrupted_classifier_training_resumes_exactly(tmp_path):
    ds = _tiny_data(per_class=10, seed=4)
    cfg = _tiny_config(epochs=4)
    straight = train_discriminator(ds, cfg)
    state = tmp_path / "clf.state"
    train_discriminator(ds, cfg, state_path=state, stop_after=2)
    resumed = train_discriminator(ds, cfg, state_path=state)
    assert resumed.history == straight.history
    assert resumed.net.weight_hash() == straight.net.weight_hash()


def test_train_discriminator_is_deterministic():
    ds = _tiny_data(per_class=10, seed=4)
    r1 = train_discriminator(ds, _tiny_config())
    r2 = train_discriminator(ds, _tiny_config())
    assert r1.net.weight_hash() == r2.net.weight_hash()
    assert r1.history == r2.history


def _gdce_setup(seed=0):
    shifted = _tiny_data(per_class=15, seed=7, domain=1,
                         profile=ShiftProfile(gamma=0.5))
    ref = _tiny_data(per_class=15, seed=7, domain=0)
    disc, ext = _frozen_nets()
    pool = ReferencePool(ref.x)
    return shifted, pool, disc, ext


def test_train_gdce_history_and_freeze_contract():
    shifted, pool, disc, ext = _gdce_setup()
    before_disc, before_ext = disc.weight_hash(), ext.weight_hash()
    result = train_gdce(shifted, pool, disc, ext, _tiny_config(epochs=2))
    assert disc.weight_hash() == before_disc
    assert ext.weight_hash() == before_ext
    assert len(result.history) == 2
    for row in result.history:
        assert row["total"] == row["ce"] + row["perceptual"]
        assert row["ce"] >= 0 and row["perceptual"] >= 0
    assert result.best_metric == max(r["worst_group"] for r in result.history)


def test_train_gdce_is_deterministic():
    shifted, pool, disc, ext = _gdce_setup()
    r1 = train_gdce(shifted, pool, disc, ext, _tiny_config())
    r2 = train_gdce(shifted, pool, disc, ext, _tiny_config())
    assert r1.net.weight_hash() == r2.net.weight_hash()
    assert r1.history == r2.history


def test_interrupted_training_resumes_on_the_same_trajectory(tmp_path):
    shifted, pool, disc, ext = _gdce_setup()
    cfg = _tiny_config(epochs=4)
    straight = train_gdce(shifted, pool, disc, ext, cfg)

    state = tmp_path / "train.state"
    train_gdce(shifted, pool, disc, ext, cfg, state_path=state, stop_after=2)
    resumed = train_gdce(shifted, pool, disc, ext, cfg, state_path=state)
    assert resumed.history == straight.history
    assert resumed.best_epoch == straight.best_epoch
    assert resumed.net.weight_hash() == straight.net.weight_hash()


def test_resume_rejects_config_changes(tmp_path):
    shifted, pool, disc, ext = _gdce_setup()
    state = tmp_path / "train.state"
    train_gdce(shifted, pool, disc, ext, _tiny_config(epochs=4),
               state_path=state, stop_after=1)
    with pytest.raises(DataError):
        train_gdce(shifted, pool, disc, ext, _tiny_config(epochs=4, lr=5e-4),
                   state_path=state)


def test_early_stop_target_halts_training():
    shifted, pool, disc, ext = _gdce_setup()
    result = train_gdce(shifted, pool, disc, ext,
                        _tiny_config(epochs=10, early_stop_target=0.0))
    assert len(result.history) == 1


def test_enhanced_batch_stays_in_unit_range():
    shifted, pool, disc, ext = _gdce_setup()
    gdce = build_gdce(GdceConfig(num_blocks=2, n_iterations=4, image_size=16), seed=9)
    out = enhance_batch(gdce, shifted.x[:7], batch_size=3)
    assert out.shape == shifted.x[:7].shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_crossval_aggregates_fold_means():
    ds = _tiny_data(per_class=10)
    seen = []

    def runner(train, test, fold, config):
        seen.append((len(train), len(test), fold))
        return {"metric": float(fold)}

    out = crossval_run(ds, _tiny_config(), runner)
    assert [r["fold"] for r in out["folds"]] == [0, 1, 2, 3, 4]
    assert out["mean"]["metric"] == np.mean([0, 1, 2, 3, 4])
    assert all(tr + te == 20 for tr, te, _ in seen)


def test_crossval_requires_all_folds():
    ds = _tiny_data(per_class=10)
    partial = ds.subset(ds.folds < 2)
    with pytest.raises(DataError, match="missing"):
        crossval_run(partial, _tiny_config(), lambda *a: {"m": 0.0})


def test_ablation_grid_cells_are_order_independent():
    shifted, pool, disc, ext = _gdce_setup()
    test_ds = _tiny_data(per_class=5, seed=8, domain=1, profile=ShiftProfile(gamma=0.5))
    cfg = _tiny_config(epochs=1)
    fwd = ablation_grid(shifted, pool, disc, ext, [1, 2], [2, 4], cfg, test=test_ds)
    rev = ablation_grid(shifted, pool, disc, ext, [2, 1], [4, 2], cfg, test=test_ds)
    assert set(fwd["cells"]) == {(1, 2), (1, 4), (2, 2), (2, 4)}
    for key, cell in fwd["cells"].items():
        assert cell == rev["cells"][key]
        assert "test_worst_group" in cell
    text = render_ablation_grid(fwd)
    assert "L\\N" in text and "2" in text
