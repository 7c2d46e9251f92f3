import json

import numpy as np
import pytest

from reidspace.corpus import EmbeddingCorpus, EmbeddingRecord, concat_corpora
from reidspace.probes import (
    ProbeConfig,
    ProbeModel,
    _loss_and_grad,
    eval_probe,
    identity_split,
    load_probe_model,
    run_attribute_probe,
    save_probe_model,
    train_probe,
)
from reidspace.synth import AttributeSpec, SynthConfig, generate

import oracles


def blob_data(rng, n_per, centers, noise=0.3):
    xs, ys = [], []
    for label, center in centers.items():
        xs.append(center + noise * rng.standard_normal((n_per, len(center))))
        ys += [label] * n_per
    return np.vstack(xs), np.asarray(ys)


def labeled_corpus(labels_by_identity, images_per_identity=3, d=6, seed=0, attribute="tag"):
    rng = np.random.default_rng(seed)
    records = []
    for identity, label in labels_by_identity.items():
        for j in range(images_per_identity):
            attrs = {} if label is None else {attribute: label}
            role = "gallery" if j % 2 == 0 else "probe"
            records.append(EmbeddingRecord(
                f"{identity}-{j}", identity, role, "ds", attrs,
                rng.standard_normal(d).astype(np.float32)))
    return EmbeddingCorpus(d, records)


# ---------------------------------------------------------------------------
# training

def test_separable_blobs_reach_perfect_accuracy():
    rng = np.random.default_rng(1)
    centers = {"a": np.array([3.0, 0.0, 0.0, 0.0]), "b": np.array([-3.0, 0.0, 0.0, 0.0])}
    x_train, y_train = blob_data(rng, 40, centers)
    x_test, y_test = blob_data(rng, 40, centers)
    model = train_probe(x_train, y_train)
    result = eval_probe(model, x_test, y_test)
    assert result["accuracy"] == 1.0
    assert result["auc"] == 1.0
    assert model.classes == ("a", "b")


def test_three_class_probe_has_no_auc():
    rng = np.random.default_rng(2)
    centers = {f"c{i}": 4.0 * np.eye(5)[i] for i in range(3)}
    x_train, y_train = blob_data(rng, 30, centers)
    x_test, y_test = blob_data(rng, 30, centers)
    result = eval_probe(train_probe(x_train, y_train), x_test, y_test)
    assert result["accuracy"] >= 0.95
    assert result["auc"] is None
    assert [support for _, _, support in result["per_class"]] == [30, 30, 30]


def test_constant_features_predict_the_majority_class():
    x = np.ones((30, 4))
    y = np.asarray(["a"] * 20 + ["b"] * 10)
    model = train_probe(x, y)
    assert list(model.predict(x)) == ["a"] * 30
    assert eval_probe(model, x, y)["accuracy"] == pytest.approx(2.0 / 3.0)


def test_uninformative_features_stay_near_chance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((240, 10))
    y = np.asarray(["0", "1"])[rng.integers(0, 2, size=240)]
    model = train_probe(x[:140], y[:140])
    acc = eval_probe(model, x[140:], y[140:])["accuracy"]
    # 3 sigma binomial band around chance for 100 test points
    assert abs(acc - 0.5) <= 3 * 0.5 / np.sqrt(100)


def test_training_validation():
    x = np.ones((4, 2))
    with pytest.raises(ValueError, match="must align"):
        train_probe(x, np.asarray(["a", "b"]))
    with pytest.raises(ValueError, match="empty training set"):
        train_probe(np.empty((0, 2)), np.asarray([]))
    with pytest.raises(ValueError, match="non-finite"):
        train_probe(np.full((2, 2), np.nan), np.asarray(["a", "b"]))
    with pytest.raises(ValueError, match="single class"):
        train_probe(x, np.asarray(["a", "a", "a", "a"]))


# ---------------------------------------------------------------------------
# the objective

def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((15, 6))
    onehot = np.zeros((15, 3))
    onehot[np.arange(15), rng.integers(0, 3, size=15)] = 1.0
    weights = 0.1 * rng.standard_normal((3, 6))
    bias = 0.1 * rng.standard_normal(3)
    l2 = 1e-3
    _, grad_w, grad_b = _loss_and_grad(weights, bias, x, onehot, l2)

    eps = 1e-6
    fd_w = np.zeros_like(weights)
    for i in range(weights.shape[0]):
        for j in range(weights.shape[1]):
            up, down = weights.copy(), weights.copy()
            up[i, j] += eps
            down[i, j] -= eps
            fd_w[i, j] = (_loss_and_grad(up, bias, x, onehot, l2)[0]
                          - _loss_and_grad(down, bias, x, onehot, l2)[0]) / (2 * eps)
    fd_b = np.zeros_like(bias)
    for i in range(bias.size):
        up, down = bias.copy(), bias.copy()
        up[i] += eps
        down[i] -= eps
        fd_b[i] = (_loss_and_grad(weights, up, x, onehot, l2)[0]
                   - _loss_and_grad(weights, down, x, onehot, l2)[0]) / (2 * eps)

    scale = max(1.0, np.abs(grad_w).max(), np.abs(grad_b).max())
    assert np.abs(grad_w - fd_w).max() / scale < 1e-5
    assert np.abs(grad_b - fd_b).max() / scale < 1e-5


def test_descent_never_increases_the_loss():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((60, 8))
    onehot = np.zeros((60, 2))
    onehot[np.arange(60), rng.integers(0, 2, size=60)] = 1.0
    l2 = 1e-4
    # safe step: softmax-CE gradient is Lipschitz with L <= lam_max(X^T X)/n + l2
    lam = np.linalg.eigvalsh(x.T @ x).max()
    lr = 1.0 / (lam / x.shape[0] + l2)
    weights = np.zeros((2, 8))
    bias = np.zeros(2)
    losses = []
    for _ in range(30):
        loss, grad_w, grad_b = _loss_and_grad(weights, bias, x, onehot, l2)
        losses.append(loss)
        weights -= lr * grad_w
        bias -= lr * grad_b
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


# ---------------------------------------------------------------------------
# splitting

def test_identity_split_properties():
    labels = {f"id{i}": "x" if i % 2 else "y" for i in range(5)}
    labels["id_unlabeled"] = None
    corpus = labeled_corpus(labels)

    split = identity_split(corpus, "tag", fraction=0.5, seed=0)
    assert len(split.train_identities) == 3  # ceil(0.5 * 5)
    assert len(split.test_identities) == 2
    assert set(split.train_identities) & set(split.test_identities) == set()
    assert set(split.train_identities) | set(split.test_identities) == {f"id{i}" for i in range(5)}

    again = identity_split(corpus, "tag", fraction=0.5, seed=0)
    assert again.train_identities == split.train_identities
    others = {identity_split(corpus, "tag", fraction=0.5, seed=s).train_identities for s in range(6)}
    assert len(others) > 1  # the seed actually moves the split


def test_identity_split_errors():
    corpus = labeled_corpus({"id0": "x", "id1": "y"})
    with pytest.raises(ValueError, match="fraction must be in"):
        identity_split(corpus, "tag", fraction=1.0)
    with pytest.raises(ValueError, match="absent from all records"):
        identity_split(corpus, "nope")
    solo = labeled_corpus({"id0": "x", "id1": None})
    with pytest.raises(ValueError, match="at least 2 labeled identities"):
        identity_split(solo, "tag")


def test_single_class_split_is_rejected():
    corpus = labeled_corpus({"id0": "x", "id1": "x", "id2": None})
    with pytest.raises(ValueError, match="single class; reseed"):
        run_attribute_probe(corpus, "tag")


# ---------------------------------------------------------------------------
# evaluation

def test_eval_probe_against_manual_count():
    rng = np.random.default_rng(6)
    model = ProbeModel(weights=rng.standard_normal((2, 5)), bias=rng.standard_normal(2),
                       classes=("n", "p"), config=ProbeConfig())
    x = rng.standard_normal((100, 5))
    y = np.asarray(["n", "p"])[rng.integers(0, 2, size=100)]
    result = eval_probe(model, x, y)
    logits = x @ model.weights.T + model.bias
    manual = np.mean([("n", "p")[int(np.argmax(l))] == label for l, label in zip(logits, y)])
    assert result["accuracy"] == pytest.approx(manual)
    scores = logits[:, 1]
    assert result["auc"] == pytest.approx(
        oracles.brute_auc(scores[y == "p"], scores[y == "n"]), abs=1e-12)

    with pytest.raises(ValueError, match="was not in the training classes"):
        eval_probe(model, x, np.asarray(["zzz"] * 100))


def test_always_one_class_model():
    model = ProbeModel(weights=np.zeros((2, 3)), bias=np.asarray([10.0, 0.0]),
                       classes=("a", "b"), config=ProbeConfig())
    x = np.random.default_rng(7).standard_normal((20, 3))
    y = np.asarray(["a"] * 15 + ["b"] * 5)
    result = eval_probe(model, x, y)
    assert result["accuracy"] == 0.75
    per_class = {label: acc for label, acc, _ in result["per_class"]}
    assert per_class["a"] == 1.0
    assert per_class["b"] == 0.0


def test_per_class_support_zero_is_none():
    model = ProbeModel(weights=np.zeros((2, 3)), bias=np.asarray([1.0, 0.0]),
                       classes=("a", "b"), config=ProbeConfig())
    x = np.ones((4, 3))
    result = eval_probe(model, x, np.asarray(["a"] * 4))
    per_class = {label: (acc, support) for label, acc, support in result["per_class"]}
    assert per_class["b"] == (None, 0)
    assert result["auc"] is None  # no negatives to rank


# ---------------------------------------------------------------------------
# end to end

def test_attribute_probe_folds_standardization():
    cfg = SynthConfig(dimension=24, identities=24, gallery_per_identity=3, probe_per_identity=1,
                      identity_dim=8, noise_variance=0.05,
                      attributes=(AttributeSpec("tag", 2, 3.0),), seed=8)
    corpus, _ = generate(cfg)
    report, model = run_attribute_probe(corpus, "tag", fraction=0.5, seed=1)
    assert report.accuracy >= 0.95

    # the returned model must act on raw, unstandardized vectors
    test_set = set(report.split.test_identities)
    rows = [r for r in corpus.records if r.identity_id in test_set]
    x = np.stack([r.vector for r in rows]).astype(np.float64)
    y = np.asarray([r.attributes["tag"] for r in rows])
    assert eval_probe(model, x, y)["accuracy"] == pytest.approx(report.accuracy)
    assert report.test_size == len(rows)
    assert report.train_size + report.test_size == len(corpus.records)

    blob = report.to_json_dict(config={"attribute": "tag"})
    assert blob["kind"] == "probe_report"
    assert blob["split"]["train_identities"] == list(report.split.train_identities)
    assert json.dumps(blob)  # serializable as-is


def test_dataset_attribute_probes_origin():
    def part(dataset, seed):
        cfg = SynthConfig(dimension=16, identities=10, gallery_per_identity=2,
                          probe_per_identity=1, identity_dim=6, noise_variance=0.05,
                          offset_norm=6.0, dataset=dataset, seed=seed)
        return generate(cfg)[0]

    corpus = concat_corpora([part("cam_a", 21), part("cam_b", 22), part("cam_c", 23)])
    report, model = run_attribute_probe(corpus, "dataset", fraction=0.5, seed=2)
    assert model.classes == ("cam_a", "cam_b", "cam_c")
    assert report.accuracy >= 0.9  # distinct offsets make origin linearly decodable
    assert report.auc is None


# ---------------------------------------------------------------------------
# serialization

def test_probe_model_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    x_train, y_train = blob_data(rng, 25, {"a": np.array([2.0, 0.0]), "b": np.array([-2.0, 0.0])})
    model = train_probe(x_train, y_train, ProbeConfig(learning_rate=0.2, max_epochs=200))
    path = tmp_path / "model.emb1"
    save_probe_model(model, path)
    again = load_probe_model(path)
    assert again.classes == model.classes
    assert again.config == model.config
    x = rng.standard_normal((50, 2))
    assert list(again.predict(x)) == list(model.predict(x))

    meta_path = tmp_path / "model.emb1.meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    assert meta["kind"] == "probe_model"

    bad = tmp_path / "bad.emb1"
    bad.write_bytes(b"XXXX")
    with pytest.raises(ValueError, match="bad magic"):
        load_probe_model(bad)
    meta["kind"] = "pca_basis"
    meta_path.write_text(json.dumps(meta), encoding="utf-8")
    with pytest.raises(ValueError, match="not a probe_model descriptor"):
        load_probe_model(path)
