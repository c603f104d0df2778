import numpy as np
import pytest

from dasnlab.errors.exceptions import DataError, DimensionError
from dasnlab.services.model import DasnConfig, DasnModel
from dasnlab.services.probe import (
    extract_features,
    probe_model,
    stratified_split,
    suppression_report,
    train_probe,
)
from dasnlab.services.synthdata import generate_domain


@pytest.fixture
def probe_data(factor_model):
    """36 samples of domain A: 3 identities, 2 environments, 2 sensors, 12+ per class."""
    return generate_domain(factor_model, "A", samples_per_identity=12)


def balanced_labels(classes=3, per_class=30):
    return np.repeat(np.arange(classes), per_class)


def test_one_hot_features_are_fully_decodable():
    labels = balanced_labels()
    features = np.eye(3)[labels]
    result = train_probe(features, labels, seed=2)
    assert result.accuracy == 1.0
    assert result.classes == 3
    assert result.n_test == 18
    assert result.n_train == 72
    assert result.majority == pytest.approx(1 / 3)


def test_noise_features_sit_near_chance():
    labels = balanced_labels(per_class=60)
    accuracies = []
    for seed in range(10):
        features = np.random.default_rng(seed).normal(size=(labels.size, 5))
        accuracies.append(train_probe(features, labels, seed=seed).accuracy)
    assert np.mean(accuracies) == pytest.approx(1 / 3, abs=0.1)


def test_shuffled_labels_fall_to_majority():
    labels = balanced_labels(per_class=60)
    features = np.eye(3)[labels] + 0.1 * np.random.default_rng(4).normal(size=(labels.size, 3))
    results = [
        train_probe(features, np.random.default_rng(seed).permutation(labels), seed=seed)
        for seed in range(5)
    ]
    majority = np.mean([r.majority for r in results])
    assert np.mean([r.accuracy for r in results]) == pytest.approx(majority, abs=0.1)


def test_mlp_probe_decodes_xor():
    labels = balanced_labels(classes=2, per_class=40)
    rng = np.random.default_rng(1)
    signs = rng.choice([-1.0, 1.0], size=(labels.size, 1))
    features = np.hstack([signs, signs * np.where(labels == 1, -1.0, 1.0)[:, None]])
    features = features + 0.05 * rng.normal(size=features.shape)
    result = train_probe(features, labels, seed=3, epochs=400, hidden_dim=16)
    assert result.accuracy >= 0.9


def test_class_starvation():
    labels = np.array([0] * 10 + [1] * 9)
    with pytest.raises(DataError):
        train_probe(np.zeros((19, 2)), labels, seed=1)
    with pytest.raises(DataError):
        train_probe(np.zeros((12, 2)), np.zeros(12), seed=1)


def test_stratified_split_is_deterministic_and_disjoint():
    labels = balanced_labels(classes=4, per_class=11)
    train, test = stratified_split(labels, seed=5)
    again = stratified_split(labels, seed=5)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])
    assert not set(train) & set(test)
    assert len(train) + len(test) == labels.size
    assert np.array_equal(np.bincount(labels[test]), np.full(4, 2))


def test_extract_features_of_zero_encoder(probe_data):
    config = DasnConfig(input_dim=probe_data.input_dim, feature_dim=5)
    features, labels = extract_features(DasnModel.zeros(config), probe_data)
    assert np.array_equal(features, np.zeros((len(probe_data), 5)))
    assert set(labels) == {"y", "identity", "environment", "sensor", "domain"}
    assert np.array_equal(labels["identity"], probe_data.factor_labels("identity"))


def test_extract_features_checks_input_dim(make_model, probe_data):
    with pytest.raises(DimensionError):
        extract_features(make_model(input_dim=4), probe_data)


def test_probe_model_skips_single_class_factors(make_model, probe_data):
    model = make_model(input_dim=probe_data.input_dim)
    report = probe_model(model, probe_data, "dasn", factors=("identity", "domain"), epochs=20)
    assert set(report.factors) == {"identity"}
    rows = report.rows()
    assert [r["factor"] for r in rows] == ["spoof", "identity"]
    assert all(r["model"] == "dasn" for r in rows)


def test_identical_encoders_have_no_suppression(make_model, probe_data):
    model = make_model(input_dim=probe_data.input_dim)
    report = suppression_report(model, model.copy(), probe_data, epochs=30)
    assert report.deltas == {"identity": 0.0, "environment": 0.0, "sensor": 0.0}
    assert report.spoof_delta == 0.0


def test_suppression_is_antisymmetric(make_model, probe_data):
    a = make_model(input_dim=probe_data.input_dim, seed=1)
    b = make_model(input_dim=probe_data.input_dim, seed=2)
    forward = suppression_report(a, b, probe_data, epochs=30)
    backward = suppression_report(b, a, probe_data, epochs=30)
    for k, delta in forward.deltas.items():
        assert backward.deltas[k] == -delta
    assert backward.spoof_delta == -forward.spoof_delta
    document = forward.to_dict()
    assert document["baseline"]["label"] == "baseline"
    assert document["target"]["label"] == "dasn"


def test_suppression_needs_matching_inputs(make_model, probe_data):
    with pytest.raises(DimensionError):
        suppression_report(make_model(input_dim=4), make_model(input_dim=6), probe_data)
