import pytest

from model_gradchecks import MODELS


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", sorted(MODELS))
def test_model_loss_gradients(name, seed):
    res = MODELS[name](seed)
    assert res.ok(1e-4), (name, seed, res.per_input)
