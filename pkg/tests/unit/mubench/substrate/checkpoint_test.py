"""Checkpoint container unit tests."""
from pathlib import Path

import pytest
import torch
from mubench.config import ArchKind
from mubench.domain import Checkpoint, CheckpointError
from mubench.substrate.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_model, save_checkpoint, save_model
from mubench.substrate.networks import init_model

from tests.utilities import toy_arch


@pytest.fixture(name="state")
def state_fixture() -> Checkpoint:
    """A checkpoint with momentum and RNG state."""
    base = init_model(toy_arch(ArchKind.CNN), 4)
    model = base.with_params(base.params, epochs=7, train_accuracy=81.25)
    return Checkpoint(model, torch.linspace(-1, 1, model.arch.param_count()), 3, b"\x01\x02\x03")


def test_decode_restores_fields(state: Checkpoint) -> None:
    """Test that every field survives encoding."""
    again = decode_checkpoint(encode_checkpoint(state))
    assert again.model.arch == state.model.arch
    assert torch.equal(again.model.params, state.model.params)
    assert torch.equal(again.optimizer_state, state.optimizer_state)
    assert again.epoch == 3
    assert again.rng_state == b"\x01\x02\x03"
    assert again.model.epochs == 7
    assert again.model.train_accuracy == 81.25
    assert again.model.seed == 4


@pytest.mark.parametrize("offset", [len(MAGIC) + 3, 40, -6, -1])
def test_corrupt_byte_is_detected(state: Checkpoint, offset: int) -> None:
    """Test that flipping any byte raises CheckpointError."""
    data = bytearray(encode_checkpoint(state))
    data[offset] ^= 0xFF
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(data))


def test_bad_magic(state: Checkpoint) -> None:
    """Test the magic check."""
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOTACKPT" + encode_checkpoint(state)[8:])


def test_truncated(state: Checkpoint) -> None:
    """Test truncation."""
    with pytest.raises(CheckpointError):
        decode_checkpoint(encode_checkpoint(state)[:-20])


def test_model_file(tmp_path: Path) -> None:
    """Test model-only files."""
    model = init_model(toy_arch(ArchKind.MLP), 2)
    path = save_model(model, tmp_path / "models" / "m.ckpt")
    assert path.is_file()
    assert torch.equal(load_model(path).params, model.params)
    save_checkpoint(Checkpoint(model, torch.zeros(0), 0, b""), tmp_path / "c.ckpt")
    assert load_model(tmp_path / "c.ckpt").arch == model.arch
