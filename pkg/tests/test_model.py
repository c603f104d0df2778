import numpy as np
import pytest

from dasnlab.errors.exceptions import ConfigurationError, FormatError
from dasnlab.services.autodiff import Tape
from dasnlab.services.losses import secondary_cls_loss, sif_cls_loss
from dasnlab.services.model import (
    DasnConfig,
    DasnModel,
    classify_spoof,
    encode,
    head_forward,
    infer,
    secondary_classify,
)
from dasnlab.services.metrics import ScoreSet, auc
from dasnlab.services.synthdata import build_factor_model, generate_domain


def test_groups_partition_parameters(make_model):
    model = make_model(factors=("identity", "sensor"))
    seen = {}
    for name, group in model.groups.items():
        for param in group.parameters():
            assert param not in seen
            seen[param] = name
    assert set(seen) == set(model.parameters())
    assert set(model.groups) == {"E", "C", "S", "I.identity", "D.identity", "I.sensor", "D.sensor"}


def test_head_shapes(make_model):
    model = make_model(factors=("identity",), class_counts={"identity": 5})
    features = encode(model, np.ones((2, 4)))
    assert features.shape == (2, 3)
    assert classify_spoof(model, features).shape == (2, 2)
    intermediate, logits = head_forward(model, "identity", features)
    assert intermediate.shape == (2, 3)
    assert logits.shape == (2, 5)
    assert secondary_classify(model, "identity", features).shape == (2, 2)


def test_zero_model_outputs():
    model = DasnModel.zeros(DasnConfig(input_dim=4, factors=("identity",), class_counts={"identity": 3}))
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(encode(model, x).data, np.zeros((3, 32)))
    assert np.array_equal(infer(model, x), np.full(3, 0.5))
    logits = secondary_classify(model, "identity", encode(model, x))
    assert np.array_equal(logits.data, np.zeros((3, 2)))


def test_batch_independence(make_model, rng):
    model = make_model()
    x = rng.normal(size=(5, 4))
    full = encode(model, x).data
    for i in range(5):
        assert np.allclose(encode(model, x[i:i + 1]).data[0], full[i], rtol=1e-12, atol=0)


def test_fixed_weights_match_hand_arithmetic(make_model, rng):
    model = make_model()
    x = rng.normal(size=(2, 4))
    e0, e1 = model.group("E").layers
    c0 = model.group("C").layers[0]
    hidden = np.maximum(x @ e0.weight + e0.bias, 0.0)
    features = hidden @ e1.weight + e1.bias
    logits = features @ c0.weight + c0.bias
    out = classify_spoof(model, encode(model, x)).data
    assert np.allclose(out, logits, rtol=1e-13, atol=1e-15)


def test_inactive_factor_rejected(make_model):
    model = make_model(factors=("identity",))
    features = encode(model, np.ones((1, 4)))
    with pytest.raises(ConfigurationError):
        head_forward(model, "sensor", features)
    with pytest.raises(ConfigurationError):
        secondary_classify(model, "environment", features)


def _sif_grads(model, x, labels, reverse):
    tape = Tape()
    features = encode(model, x, tape)
    _, logits = head_forward(model, "identity", features, reverse_into_encoder=reverse)
    return logits.data, tape.backward(sif_cls_loss(logits, labels))


def test_head_reversal_is_forward_identity_and_negates_encoder(make_model, rng):
    model = make_model()
    x, labels = rng.normal(size=(4, 4)), np.array([0, 1, 2, 1])
    plain_out, plain = _sif_grads(model, x, labels, reverse=False)
    flip_out, flipped = _sif_grads(model, x, labels, reverse=True)
    assert plain_out.tobytes() == flip_out.tobytes()
    for name in plain:
        if name.startswith("E."):
            assert np.array_equal(flipped[name], -plain[name])
        else:
            assert np.array_equal(flipped[name], plain[name])


def _scls_grads(model, x, y, reverse):
    tape = Tape()
    features = encode(model, x, tape)
    logits = secondary_classify(model, "identity", features, reverse_into_intermediate=reverse)
    return logits.data, tape.backward(secondary_cls_loss(logits, y))


def test_secondary_reversal_negates_intermediate_only(make_model, rng):
    model = make_model()
    x, y = rng.normal(size=(4, 4)), np.array([0, 1, 1, 0])
    plain_out, plain = _scls_grads(model, x, y, reverse=False)
    flip_out, flipped = _scls_grads(model, x, y, reverse=True)
    assert plain_out.tobytes() == flip_out.tobytes()
    for name in plain:
        if name.startswith(("I.", "E.")):
            assert np.array_equal(flipped[name], -plain[name])
        else:
            assert np.array_equal(flipped[name], plain[name])
    assert not any(name.startswith(("D.", "C.")) for name in plain)


def test_pruning_heads_changes_no_inference(make_model, rng):
    model = make_model(factors=("identity", "environment"))
    x = rng.normal(size=(6, 4))
    pruned = model.prune_heads()
    assert set(pruned.groups) == {"E", "C"}
    assert pruned.is_pruned
    assert infer(pruned, x).tobytes() == infer(model, x).tobytes()


def test_untrained_models_score_at_chance(make_model):
    data = generate_domain(build_factor_model(5), "M")
    aucs = [
        auc(ScoreSet(infer(make_model(input_dim=data.input_dim, seed=seed), data.x), data.y))
        for seed in range(30)
    ]
    assert np.mean(aucs) == pytest.approx(0.5, abs=0.1)


def test_initialization_is_deterministic(make_model):
    assert make_model(seed=4).snapshot() == make_model(seed=4).snapshot()
    assert make_model(seed=4).snapshot() != make_model(seed=5).snapshot()


def test_model_snapshot_round_trip(make_model):
    model = make_model(factors=("identity",))
    image = model.snapshot()
    blank = DasnModel.zeros(model.config)
    blank.restore(image)
    assert blank.snapshot() == image
    other = make_model(factors=("identity",), feature_dim=5)
    with pytest.raises(FormatError):
        other.restore(image)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DasnConfig(input_dim=0)
    with pytest.raises(ConfigurationError):
        DasnConfig(input_dim=4, factors=("identity",), class_counts={"identity": 1})
    with pytest.raises(ConfigurationError):
        DasnConfig(input_dim=4, factors=("age",), class_counts={"age": 3})
    config = DasnConfig(input_dim=4, factors=("domain",), class_counts={"domain": 3})
    assert DasnConfig.from_dict(config.to_dict()) == config
