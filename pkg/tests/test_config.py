import json

import pytest

from srecap.config import TrainConfig, load_config, preset


def test_full_defaults():
    c = TrainConfig()
    assert (c.embed_dim, c.hidden_dim, c.heads, c.ffn_dim, c.attn_dim, c.rows) == (512, 512, 8, 2048, 350, 30)
    assert (c.lr, c.beta1, c.beta2, c.batch_size, c.epochs_xe, c.beam, c.max_concepts) == (4e-4, 0.8, 0.999, 50, 15, 5, 20)
    assert preset("full") == c


def test_desk_sizes():
    c = preset("desk")
    assert (c.embed_dim, c.hidden_dim, c.heads, c.ffn_dim, c.attn_dim, c.rows) == (64, 64, 4, 128, 48, 8)


@pytest.mark.parametrize("bad", [{"mode": "medium"}, {"rows": 0}, {"embed_dim": 10, "heads": 3}, {"lr": -1.0}])
def test_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_dict_round_trip_and_unknown_keys(tmp_path):
    c = preset("desk", seed=7)
    assert TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**c.to_dict(), "dropout": 0.1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"rows": 4}), encoding="utf-8")
    assert load_config(path) == {"rows": 4}
    with pytest.raises(ValueError):
        preset("huge")
