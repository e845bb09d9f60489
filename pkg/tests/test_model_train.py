from dataclasses import replace

import numpy as np
import pytest

from graphpillars.autodiff import Tensor
from graphpillars.config import VARIANTS, TrainSection
from graphpillars.errors import ConfigError, NonFiniteLossError
from graphpillars.model import Detector, build_model, forward, infer, load_checkpoint, save_checkpoint
from graphpillars.scene import Scene, generate_scenes
from graphpillars.train import Adam, read_loss_curve, train, write_loss_curve, write_run

from conftest import SMALL_MODEL


def _scenes(cfg, n=4, seed=1):
    return generate_scenes(n, seed, cfg.scene.generator())


@pytest.mark.parametrize("variant", VARIANTS)
def test_empty_scene_gives_no_confident_detection(variant):
    model = build_model(SMALL_MODEL, variant)
    assert forward(model, Scene(0, np.zeros((0, 4))), 0.3) == []


def test_grid_size_must_be_divisible_by_sixteen():
    with pytest.raises(ConfigError):
        Detector(replace(SMALL_MODEL, extent=10.0))
    with pytest.raises(ConfigError):
        build_model(SMALL_MODEL, "point_rcnn")


@pytest.mark.parametrize("hybrid", ["graph_pillars", "kpconv_pillars"])
def test_zero_extractor_matches_pointpillars_bit_for_bit(hybrid, small_config):
    scenes = _scenes(small_config, 3)
    base = build_model(SMALL_MODEL, "pointpillars_like")
    model = build_model(SMALL_MODEL, hybrid)
    for p in model.extractor_parameters():
        p.data[:] = 0.0
    shared = {k: v for k, v in model.state_dict().items() if not k.startswith("extractor.")}
    assert shared.keys() == base.state_dict().keys()
    for k, v in base.state_dict().items():
        assert np.array_equal(shared[k], v)
    a, b = base(scenes), model(scenes)
    for name in a:
        assert a[name].logits.data.tobytes() == b[name].logits.data.tobytes()
        assert a[name].regression.data.tobytes() == b[name].regression.data.tobytes()


def test_batched_forward_matches_single_scenes(small_config):
    scenes = _scenes(small_config, 3)
    model = build_model(SMALL_MODEL, "graph_pillars")
    batched = model(scenes)
    for b, scene in enumerate(scenes):
        single = model([scene])
        for name in batched:
            np.testing.assert_allclose(batched[name].logits.data[b], single[name].logits.data[0], atol=1e-12)


def test_training_is_deterministic(small_config):
    scenes = _scenes(small_config)
    a = train(None, scenes, small_config)
    b = train(None, scenes, small_config)
    assert a.train_losses == b.train_losses
    for k, v in a.model.state_dict().items():
        assert v.tobytes() == b.model.state_dict()[k].tobytes()


def test_zero_learning_rate_leaves_parameters(small_config):
    scenes = _scenes(small_config)
    cfg = small_config.replace("train", lr=0.0)
    model = build_model(cfg.model, "kpconv_pillars")
    before = model.state_dict()
    train(model, scenes, cfg)
    for k, v in model.state_dict().items():
        assert np.array_equal(v, before[k])


def test_single_step_descends(small_config):
    scenes = _scenes(small_config, 2)
    model = build_model(SMALL_MODEL, "graph_pillars")
    loss0 = model.loss(scenes).total
    loss0.backward()
    # heads without positives never reach their regression branch
    grads = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in model.parameters()]
    step = 1e-5
    for p, g in zip(model.parameters(), grads):
        p.data = p.data - step * g
    loss1 = model.loss(scenes).total.item()
    sq = sum(float(np.sum(g * g)) for g in grads)
    assert loss1 < loss0.item()
    # first-order prediction of the decrease
    assert abs((loss0.item() - loss1) - step * sq) < 0.05 * step * sq


def test_adam_moves_against_gradient():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9])


def test_non_finite_loss_names_the_term(small_config):
    scenes = [s for s in _scenes(small_config, 8) if any(lab.class_name == "car" for lab in s.labels)][:1]
    model = build_model(SMALL_MODEL, "pointpillars_like")
    car_head = model.heads[1]
    assert car_head.group.name == "car_like"
    car_head.reg.bias.data[0] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        train(model, scenes, small_config)
    assert info.value.term == "car_like/l1"


def test_empty_training_set_raises(small_config):
    with pytest.raises(ConfigError):
        train(None, [], small_config)


def test_best_epoch_tracks_validation(small_config):
    scenes = _scenes(small_config)
    val = _scenes(small_config, 2, seed=99)
    res = train(None, scenes, small_config.replace("train", epochs=3), val)
    vals = [r.val_loss for r in res.curve]
    assert res.best_epoch == 1 + int(np.argmin(vals))


def test_checkpoint_round_trip(tmp_path, small_config):
    scenes = _scenes(small_config, 2)
    model = build_model(SMALL_MODEL, "kpconv_pillars")
    for p in model.parameters():
        p.data = p.data + 0.01
    save_checkpoint(model, tmp_path / "m.pgw", 7, "abc")
    loaded, meta = load_checkpoint(tmp_path / "m.pgw")
    assert meta["epoch"] == 7 and meta["variant"] == "kpconv_pillars" and meta["config_hash"] == "abc"
    a, b = model(scenes), loaded(scenes)
    for name in a:
        assert a[name].logits.data.tobytes() == b[name].logits.data.tobytes()


def test_write_run_and_loss_curve(tmp_path, small_config):
    res = train(None, _scenes(small_config, 2), small_config)
    write_run(res, small_config, tmp_path)
    for name in ("model.pgw", "model.json", "loss.csv", "config.json", "config.ini"):
        assert (tmp_path / name).exists()
    curve = read_loss_curve(tmp_path / "loss.csv")
    assert curve == res.curve
    write_loss_curve(curve, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "loss.csv").read_bytes()


@pytest.mark.parametrize("variant", VARIANTS)
def test_single_scene_overfit(variant, small_config):
    scene = generate_scenes(1, 5, small_config.scene.generator())
    cfg = small_config.replace("train", epochs=100, batch_size=1, augment=False)
    res = train(build_model(SMALL_MODEL, variant), scene, cfg)
    assert res.train_losses[-1] <= 0.1 * res.train_losses[0]


def test_infer_keys_by_scene_id(small_config):
    scenes = _scenes(small_config, 3)
    out = infer(build_model(SMALL_MODEL, "bev_rendering"), scenes, batch_size=2)
    assert list(out) == [s.scene_id for s in scenes]


def test_train_section_validation():
    with pytest.raises(ConfigError):
        TrainSection(lr=-1.0)
    with pytest.raises(ConfigError):
        TrainSection(batch_size=0)
