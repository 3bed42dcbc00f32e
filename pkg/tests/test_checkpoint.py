import json

import pytest
import torch

from personsynth.checkpoint import CheckpointError, load_checkpoint, load_module, module_tensors, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path):
    tensors = {
        "a": torch.randn(3, 4),
        "b": torch.arange(5),
        "c": torch.tensor([True, False]),
        "d": torch.randn(2, dtype=torch.float64),
        "e": torch.tensor(1.5),
    }
    state = {"opt": {"state": {0: {"exp_avg": torch.randn(3)}}, "param_groups": [{"lr": 0.1, "params": [0]}]}}
    save_checkpoint(tmp_path / "ck", tensors, {"step": 7}, state)
    back, meta, st = load_checkpoint(tmp_path / "ck")
    assert meta == {"step": 7}
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype and torch.equal(back[k], tensors[k])
    assert torch.equal(st["opt"]["state"][0]["exp_avg"], state["opt"]["state"][0]["exp_avg"])
    assert st["opt"]["param_groups"][0]["lr"] == 0.1


def test_module_round_trip(tmp_path):
    m = torch.nn.Sequential(torch.nn.Conv2d(2, 3, 3), torch.nn.InstanceNorm2d(3))
    save_checkpoint(tmp_path / "ck", module_tensors("net", m))
    m2 = torch.nn.Sequential(torch.nn.Conv2d(2, 3, 3), torch.nn.InstanceNorm2d(3))
    load_module("net", m2, load_checkpoint(tmp_path / "ck")[0])
    assert torch.equal(m[0].weight, m2[0].weight)
    with pytest.raises(CheckpointError):
        load_module("other", m2, load_checkpoint(tmp_path / "ck")[0])


def test_bad_checkpoints(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")
    save_checkpoint(tmp_path / "ck", {"a": torch.zeros(2)})
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "c2", {"a": torch.zeros(2, dtype=torch.complex64)})
