import pytest
import torch
from torch import nn

from spsr.checkpointing import (FORMAT_VERSION, load_checkpoint, pack_models,
                                save_checkpoint, unpack_models)
from spsr.errors import CheckpointError


def _tiny_model(seed=0):
    gen = torch.Generator().manual_seed(seed)
    m = nn.Sequential(nn.Conv2d(3, 4, 3, padding=1), nn.Linear(4, 2))
    with torch.no_grad():
        for p in m.parameters():
            p.copy_(torch.randn(p.shape, generator=gen))
    return m


def test_pack_uses_slash_keys_and_detached_copies():
    m = _tiny_model()
    tensors = pack_models({"gen": m})
    assert set(tensors) == {"gen/0/weight", "gen/0/bias", "gen/1/weight", "gen/1/bias"}
    assert all(not v.requires_grad for v in tensors.values())
    with torch.no_grad():
        m[0].weight.add_(1.0)  # later edits must not leak into the pack
    assert not torch.equal(tensors["gen/0/weight"], m[0].weight)
    assert pack_models({"gen": None, "m": m})  # None models are skipped


def test_pack_unpack_round_trip():
    src = _tiny_model(seed=1)
    dst = _tiny_model(seed=2)
    unpack_models(pack_models({"m": src}), {"m": dst})
    for a, b in zip(src.state_dict().values(), dst.state_dict().values()):
        assert torch.equal(a, b)


def test_unpack_is_strict_and_names_the_culprit():
    m = _tiny_model()
    tensors = pack_models({"m": m})

    lacking = dict(tensors)
    del lacking["m/0/weight"], lacking["m/0/bias"]
    with pytest.raises(CheckpointError) as err:
        unpack_models(lacking, {"m": _tiny_model()})
    assert "m/0/bias" in str(err.value) and "1 more" in str(err.value)

    extra = dict(tensors)
    extra["m/9/weight"] = torch.zeros(1)
    with pytest.raises(CheckpointError) as err:
        unpack_models(extra, {"m": _tiny_model()})
    assert "m/9/weight" in str(err.value)

    wrong = dict(tensors)
    wrong["m/1/bias"] = torch.zeros(3)
    with pytest.raises(CheckpointError) as err:
        unpack_models(wrong, {"m": _tiny_model()})
    msg = str(err.value)
    assert "m/1/bias" in msg and "(3,)" in msg and "(2,)" in msg


def test_unpack_ignores_unmentioned_models():
    both = pack_models({"gen": _tiny_model(1), "disc": _tiny_model(2)})
    target = _tiny_model(3)
    unpack_models(both, {"gen": target})  # disc tensors ride along, ignored
    assert torch.equal(target[0].weight, _tiny_model(1)[0].weight)


def test_save_load_round_trip_and_format_version(tmp_path):
    m = _tiny_model(4)
    state = {"iteration": 7, "tensors": pack_models({"m": m}), "note": [1, 2]}
    p = tmp_path / "ckpt" / "it7.pt"
    save_checkpoint(state, p)
    assert p.is_file()
    assert not list(p.parent.glob("*.tmp"))
    back = load_checkpoint(p)
    assert back["iteration"] == 7
    assert back["format_version"] == FORMAT_VERSION
    assert back["note"] == [1, 2]
    for k, v in state["tensors"].items():
        assert torch.equal(back["tensors"][k], v)


def test_resaving_is_byte_identical(tmp_path):
    state = {"iteration": 3, "tensors": pack_models({"m": _tiny_model(5)}),
             "rng": {"sampler": torch.Generator().manual_seed(9).get_state()}}
    a, b = tmp_path / "a.pt", tmp_path / "b.pt"
    save_checkpoint(state, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_load_checkpoint_error_paths(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")
    garbage = tmp_path / "garbage.pt"
    garbage.write_bytes(b"not a torch archive")
    with pytest.raises(CheckpointError):
        load_checkpoint(garbage)
    not_ckpt = tmp_path / "plain.pt"
    torch.save({"weights": torch.ones(3)}, not_ckpt)
    with pytest.raises(CheckpointError):
        load_checkpoint(not_ckpt)


def test_slash_dot_key_translation_is_bijective():
    class Nested(nn.Module):
        def __init__(self):
            super().__init__()
            self.trunk = nn.Sequential(nn.Conv2d(1, 1, 1))

    m = Nested()
    tensors = pack_models({"generator": m})
    assert "generator/trunk/0/weight" in tensors
    fresh = Nested()
    with torch.no_grad():
        fresh.trunk[0].weight.zero_()
    unpack_models(tensors, {"generator": fresh})
    assert torch.equal(fresh.trunk[0].weight, m.trunk[0].weight)
