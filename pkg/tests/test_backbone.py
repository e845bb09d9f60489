import numpy as np
import pytest

from graphpillars.autodiff import Tensor, functional as F, gradcheck
from graphpillars.autodiff.gradcheck import weighted_sum
from graphpillars.backbone import FPN, Backbone, BackboneConfig, ResidualStage, Stem, fpn, residual_stage
from graphpillars.errors import ConfigError

TINY = BackboneConfig(in_channels=3, stem_channels=4, stage_channels=(4, 6, 6, 8), stage_blocks=(1, 2, 1, 1),
                      fpn_channels=5)


def _randomize(module, rng, scale=0.3):
    for p in module.parameters():
        p.data = rng.normal(0.0, scale, p.shape)
    return module


def test_stem_preserves_size_and_checks_channels():
    rng = np.random.default_rng(0)
    stem = Stem(3, 4, rng)
    assert stem(Tensor(rng.normal(size=(2, 3, 10, 12)))).shape == (2, 4, 10, 12)
    with pytest.raises(ConfigError):
        stem(Tensor(np.zeros((1, 2, 8, 8))))


def test_stem_zero_input_gives_shift_driven_constant_interior():
    rng = np.random.default_rng(1)
    stem = Stem(3, 4, rng)
    stem.conv1.affine.shift.data = np.array([0.5, -1.0, 2.0, 0.1])
    out = stem(Tensor(np.zeros((1, 3, 9, 9)))).data[0]
    interior = out[:, 1:-1, 1:-1]
    assert np.all(interior == interior[:, :1, :1])
    assert np.any(interior != 0)


def test_stem_gradcheck():
    rng = np.random.default_rng(2)
    stem = _randomize(Stem(4, 3, rng), rng)
    x = Tensor(rng.uniform(-1, 1, (1, 4, 8, 8)), requires_grad=True)
    weights = rng.normal(size=(1, 3, 8, 8))
    res = gradcheck(lambda: weighted_sum(stem(x), weights), [x] + stem.parameters(), max_entries=6,
                    rng=np.random.default_rng(0))
    assert res.passed, str(res)


def test_residual_stage_halves_and_rejects_odd():
    rng = np.random.default_rng(3)
    stage = ResidualStage(4, 6, 3, rng)
    assert residual_stage(Tensor(rng.normal(size=(1, 4, 32, 32))), stage).shape == (1, 6, 16, 16)
    with pytest.raises(ConfigError):
        stage(Tensor(np.zeros((1, 4, 9, 10))))
    with pytest.raises(ConfigError):
        ResidualStage(4, 4, 0, rng)


def test_zero_identity_blocks_pass_downsampled_map():
    rng = np.random.default_rng(4)
    stage = _randomize(ResidualStage(3, 5, 3, rng), rng)
    for block in stage.blocks:
        for p in block.parameters():
            p.data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 12, 12)))
    assert np.array_equal(stage(x).data, stage.down(x).data)


def test_fresh_identity_blocks_start_as_identity():
    rng = np.random.default_rng(5)
    stage = ResidualStage(3, 5, 4, rng)
    x = Tensor(rng.normal(size=(1, 3, 8, 8)))
    assert np.array_equal(stage(x).data, stage.down(x).data)


def test_four_stage_sizes_and_pyramid_strides():
    rng = np.random.default_rng(6)
    cfg = BackboneConfig(in_channels=2, stem_channels=4, stage_channels=(4, 4, 4, 4), stage_blocks=(1, 1, 1, 1),
                         fpn_channels=4)
    bb = Backbone(cfg, rng)
    x = bb.stem(Tensor(rng.normal(size=(1, 2, 96, 96))))
    sizes = []
    for stage in bb.stages:
        x = stage(x)
        sizes.append(x.shape[-1])
    assert sizes == [48, 24, 12, 6]
    pyr = bb(Tensor(rng.normal(size=(1, 2, 96, 96))))
    assert pyr.level(2).shape == (1, 4, 48, 48)
    assert pyr.level(4).shape == (1, 4, 24, 24)
    with pytest.raises(ConfigError):
        pyr.level(16)


@pytest.mark.parametrize("size", [32, 48, 64, 80])
def test_shape_contract_for_multiples_of_sixteen(size):
    bb = Backbone(TINY, np.random.default_rng(7))
    pyr = bb(Tensor(np.ones((1, 3, size, size))))
    assert pyr.level(2).shape[-1] == size // 2 and pyr.level(4).shape[-1] == size // 4


@pytest.mark.parametrize("size", [36, 40, 30])
def test_sizes_not_divisible_by_sixteen_raise(size):
    bb = Backbone(TINY, np.random.default_rng(8))
    with pytest.raises(ConfigError):
        bb(Tensor(np.ones((1, 3, size, size))))


def test_fpn_zero_laterals_is_pure_top_path():
    rng = np.random.default_rng(9)
    module = _randomize(FPN((3, 4, 5, 6), 4, rng), rng)
    for lat in module.laterals:
        lat.weight.data[:] = 0.0
        lat.bias.data[:] = 0.0
    stages = [Tensor(rng.normal(size=(1, c, s, s))) for c, s in ((3, 16), (4, 8), (5, 4), (6, 2))]
    pyr = fpn(stages, module)
    x = module.top(stages[3])
    expect = {}
    for level in (2, 1, 0):
        x = F.relu(module.smooth[level](F.upsample2x_nearest(x)))
        expect[2 ** (level + 1)] = x.data
    for stride in (2, 4, 8):
        assert np.array_equal(pyr.level(stride).data, expect[stride])


def test_fpn_rejects_mismatched_laterals():
    rng = np.random.default_rng(10)
    module = FPN((3, 4, 5, 6), 4, rng)
    stages = [Tensor(np.zeros((1, c, s, s))) for c, s in ((3, 16), (4, 8), (5, 5), (6, 2))]
    with pytest.raises(ConfigError):
        module(stages)
    with pytest.raises(ConfigError):
        module(stages[:3])


def test_fpn_gradcheck_two_levels():
    rng = np.random.default_rng(11)
    module = _randomize(FPN((2, 2, 3, 3), 3, rng), rng)
    stages = [Tensor(rng.uniform(-1, 1, (1, c, s, s)), requires_grad=True)
              for c, s in ((2, 8), (2, 4), (3, 2), (3, 1))]
    weights = {2: rng.normal(size=(1, 3, 8, 8)), 4: rng.normal(size=(1, 3, 4, 4))}

    def loss():
        pyr = module(stages)
        return weighted_sum(pyr.level(2), weights[2]) + weighted_sum(pyr.level(4), weights[4])

    res = gradcheck(loss, stages + module.parameters(), max_entries=6, rng=np.random.default_rng(0))
    assert res.passed, str(res)


def test_backbone_backpropagates_to_stem():
    rng = np.random.default_rng(12)
    bb = Backbone(TINY, rng)
    pyr = bb(Tensor(rng.normal(size=(1, 3, 32, 32))))
    (pyr.level(2).sum() + pyr.level(4).sum()).backward()
    assert np.any(bb.stem.conv1.conv.weight.grad != 0)
    assert np.all(np.isfinite(bb.stem.conv1.conv.weight.grad))
