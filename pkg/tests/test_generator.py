import pytest
import torch

from spsr.errors import ConfigError, ShapeError
from spsr.generator import (Generator, GeneratorConfig, build_generator,
                            super_resolve)

DESK = GeneratorConfig(num_rrdb_blocks=2, tap_indices=[1, 2],
                       num_gradient_blocks=2, base_channels=16, growth_channels=8)


def test_default_config_matches_published_layout():
    cfg = GeneratorConfig()
    assert cfg.num_rrdb_blocks == 23
    assert list(cfg.tap_indices) == [5, 10, 15, 20]
    assert cfg.scale_factor == 4
    cfg.validate()


@pytest.mark.parametrize("bad", [
    dict(scale_factor=2),
    dict(tap_indices=[5, 10, 15, 24]),
    dict(tap_indices=[0, 10, 15, 20]),
    dict(tap_indices=[5, 10, 15], num_gradient_blocks=4),
    dict(num_rrdb_blocks=0, tap_indices=[], num_gradient_blocks=0),
])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ConfigError):
        GeneratorConfig(**{**dict(num_rrdb_blocks=23), **bad}).validate()


def test_output_is_4x_for_random_sizes():
    gen = build_generator(DESK, 0)
    g = torch.Generator().manual_seed(1)
    for _ in range(4):
        h = int(torch.randint(8, 24, (1,), generator=g))
        w = int(torch.randint(8, 24, (1,), generator=g))
        out = gen(torch.rand(1, 3, h, w, generator=g))
        assert out.sr_image.shape == (1, 3, 4 * h, 4 * w)
        assert out.predicted_gradient_map.shape == (1, 3, 4 * h, 4 * w)
        assert out.gradient_features.shape[-2:] == (4 * h, 4 * w)


def test_gradient_branch_feeds_fusion():
    gen = build_generator(DESK, 0)
    lr = torch.rand(1, 3, 12, 12)
    with torch.no_grad():
        fused = gen(lr)
        ablated = gen(lr, zero_gradient_features=True)
    assert not torch.allclose(fused.sr_image, ablated.sr_image)
    # the gradient branch itself is unaffected by the ablation
    assert torch.allclose(fused.predicted_gradient_map, ablated.predicted_gradient_map)


def test_build_is_seed_deterministic():
    a = build_generator(DESK, 7)
    b = build_generator(DESK, 7)
    c = build_generator(DESK, 8)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    assert any(not torch.equal(v, c.state_dict()[k]) for k, v in a.state_dict().items())


def test_gradients_reach_all_parameters():
    gen = build_generator(DESK, 0)
    out = gen(torch.rand(1, 3, 8, 8))
    (out.sr_image.mean() + out.predicted_gradient_map.mean()).backward()
    missing = [n for n, p in gen.named_parameters() if p.grad is None]
    assert not missing, f"no grad for {missing[:4]}"


def test_super_resolve_validates_inputs():
    gen = build_generator(DESK, 0)
    with pytest.raises(ShapeError):
        super_resolve(gen, torch.rand(1, 1, 8, 8))
    with pytest.raises(ShapeError):
        super_resolve(gen, torch.rand(1, 3, 4, 8))
    out = super_resolve(gen, torch.rand(2, 3, 8, 8))
    assert out.sr_image.shape == (2, 3, 32, 32)
