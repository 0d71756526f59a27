"""Loss, optimizer, schedules, folds, metrics and the training loop."""
import numpy as np
import pytest

from cednn.model import ModelConfig, build_model
from cednn.synthetic import make_samples
from cednn.tensor import Tensor
from cednn.training import (DISFA_FOLDS, SGDMomentum, TrainOptions,
                            bce_with_logits, binarize_intensity, evaluate,
                            f1_from_counts, lr_schedule, make_folds, predict,
                            report_from_predictions, train)


# ---------------------------------------------------------------------------
# loss

def test_bce_zero_logits_is_ln2():
    logits = Tensor(np.zeros((4, 3)))
    labels = np.random.default_rng(0).integers(0, 2, (4, 3))
    loss = bce_with_logits(logits, labels)
    np.testing.assert_allclose(loss.item(), np.log(2.0), rtol=1e-12)


def test_bce_matches_naive_formula():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((5, 4))
    y = rng.integers(0, 2, (5, 4))
    loss = bce_with_logits(Tensor(z), y).item()
    p = 1.0 / (1.0 + np.exp(-z))
    want = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    np.testing.assert_allclose(loss, want, rtol=1e-10)


def test_bce_extreme_logits_finite():
    z = Tensor(np.array([[1000.0, -1000.0]]))
    y = np.array([[1, 0]])
    assert bce_with_logits(z, y).item() == 0.0
    y_wrong = np.array([[0, 1]])
    loss = bce_with_logits(z, y_wrong).item()
    assert np.isfinite(loss) and loss > 100


def test_bce_gradient_is_sigmoid_minus_label_over_count():
    rng = np.random.default_rng(2)
    z = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    y = rng.integers(0, 2, (3, 4))
    bce_with_logits(z, y).backward()
    sig = 1.0 / (1.0 + np.exp(-z.data))
    np.testing.assert_allclose(z.grad, (sig - y) / 12, rtol=1e-10)


def test_bce_validates_labels():
    with pytest.raises(ValueError):
        bce_with_logits(Tensor(np.zeros((2, 2))), np.full((2, 2), 3))
    with pytest.raises(ValueError):
        bce_with_logits(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# optimizer and schedule

def test_sgd_momentum_hand_trace():
    """lr 0.01, momentum 0.9, no decay, constant unit gradient:
    w: 1.0 -> 0.99 -> 0.971."""
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGDMomentum([w], lr=0.01, momentum=0.9, weight_decay=0.0)
    w.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(w.data, [0.99], rtol=1e-12)
    w.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(w.data, [0.971], rtol=1e-12)


def test_sgd_weight_decay_term():
    w = Tensor(np.array([2.0]), requires_grad=True)
    opt = SGDMomentum([w], lr=0.1, momentum=0.0, weight_decay=0.0005)
    w.grad = np.array([0.0])
    opt.step()
    # v = 0 + 0 + 0.0005 * 2 = 0.001; w = 2 - 0.1 * 0.001
    np.testing.assert_allclose(w.data, [1.9999], rtol=1e-12)


def test_sgd_skips_missing_gradients():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = SGDMomentum([w])
    opt.step()
    np.testing.assert_allclose(w.data, [1.0])


def test_lr_schedule_profiles():
    assert lr_schedule(0, "ck") == 0.01
    assert lr_schedule(19, "ck") == 0.01
    np.testing.assert_allclose(lr_schedule(20, "ck"), 0.001)
    np.testing.assert_allclose(lr_schedule(40, "ck"), 0.0001)
    np.testing.assert_allclose(lr_schedule(5, "disfa"), 0.001)
    np.testing.assert_allclose(lr_schedule(9, "disfa"), 0.001)
    np.testing.assert_allclose(lr_schedule(10, "disfa"), 0.0001)
    np.testing.assert_allclose(lr_schedule(3, "custom", base_lr=0.1, step=2), 0.01)
    with pytest.raises(ValueError):
        lr_schedule(0, "linear")


# ---------------------------------------------------------------------------
# labels and folds

def test_binarize_intensity_levels():
    assert [binarize_intensity(v) for v in range(6)] == [0, 0, 1, 1, 1, 1]
    with pytest.raises(ValueError):
        binarize_intensity(6)


class _Rec:
    def __init__(self, subject):
        self.subject = subject


def test_fixed_fold_table_is_subject_exclusive():
    subjects = [s for fold in DISFA_FOLDS for s in fold]
    assert len(subjects) == len(set(subjects)) == 9
    records = [_Rec(s) for s in subjects for _ in range(2)]
    splits = make_folds(records, scheme="fixed-3-fold")
    assert len(splits) == 3
    for k, (train_idx, test_idx) in enumerate(splits):
        assert sorted(train_idx + test_idx) == list(range(len(records)))
        test_subj = {records[i].subject for i in test_idx}
        train_subj = {records[i].subject for i in train_idx}
        assert test_subj == set(DISFA_FOLDS[k])
        assert not (test_subj & train_subj)


def test_fixed_folds_reject_unknown_subject():
    with pytest.raises(ValueError):
        make_folds([_Rec("SOMEONE")], scheme="fixed-3-fold")


def test_leave_groups_folds():
    records = [_Rec(f"S{i}") for i in range(7) for _ in range(3)]
    splits = make_folds(records, scheme="leave-groups", n_folds=3)
    seen_test = set()
    for train_idx, test_idx in splits:
        test_subj = {records[i].subject for i in test_idx}
        train_subj = {records[i].subject for i in train_idx}
        assert not (test_subj & train_subj)
        seen_test |= test_subj
    assert seen_test == {f"S{i}" for i in range(7)}


# ---------------------------------------------------------------------------
# metrics against a brute-force oracle

def _brute_force_report(probs, labels, threshold):
    per_f1 = []
    for j in range(labels.shape[1]):
        tp = fp = fn = 0
        for i in range(labels.shape[0]):
            pred = probs[i, j] >= threshold
            if pred and labels[i, j] == 1:
                tp += 1
            elif pred and labels[i, j] == 0:
                fp += 1
            elif not pred and labels[i, j] == 1:
                fn += 1
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per_f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return per_f1, sum(per_f1) / len(per_f1)


def test_f1_from_counts_degenerate_cases():
    assert f1_from_counts(0, 0, 0) == (0.0, 0.0, 0.0)
    assert f1_from_counts(0, 5, 0) == (0.0, 0.0, 0.0)
    assert f1_from_counts(0, 0, 5) == (0.0, 0.0, 0.0)
    p, r, f1 = f1_from_counts(3, 1, 2)
    np.testing.assert_allclose([p, r, f1], [0.75, 0.6, 2 * 0.75 * 0.6 / 1.35])


def test_report_matches_brute_force_on_1000_cases():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(50):
        n = int(rng.integers(1, 30))
        d = int(rng.integers(1, 6))
        # coarse probabilities so degenerate all-negative/all-positive
        # columns and exact-threshold hits occur often
        probs = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=(n, d))
        labels = rng.integers(0, 2, (n, d))
        report = report_from_predictions(probs, labels)
        want_f1, want_avg = _brute_force_report(probs, labels, 0.5)
        for s, w in zip(report.per_au, want_f1):
            assert s.f1 == w
            assert s.tp + s.fp + s.fn + s.tn == n
        assert report.average_f1 == want_avg
        checked += n * d
    assert checked >= 1000


def test_threshold_is_inclusive():
    report = report_from_predictions(np.array([[0.5]]), np.array([[1]]))
    assert report.per_au[0].tp == 1


def test_report_text_format():
    report = report_from_predictions(np.array([[0.9], [0.1]]),
                                     np.array([[1], [0]]))
    text = report.to_text()
    assert text.startswith("au\ttp\tfp\tfn\ttn")
    assert "average_f1\t1.000000" in text


# ---------------------------------------------------------------------------
# training loop

def _tiny_setup(seed=0, n=8):
    config = ModelConfig(num_blocks=2, input_size=28, attention_depth=2, d=3,
                         reduction_channels=36, top_channels=32)
    samples = make_samples(n=n, size=28, d=3, seed=seed, n_subjects=4)
    return config, samples


def test_train_loss_decreases():
    config, samples = _tiny_setup()
    params = build_model(config, seed=0)
    options = TrainOptions(epochs=6, batch_size=4, lr_profile="custom",
                           lr_step=100, seed=0)
    history = train(params, config, samples, options)
    # mini-batch SGD is noisy on 8 samples; require clear overall progress
    assert min(h.mean_loss for h in history[3:]) < history[0].mean_loss * 0.75


def test_train_determinism():
    config, samples = _tiny_setup()
    runs = []
    for _ in range(2):
        params = build_model(config, seed=0)
        options = TrainOptions(epochs=2, batch_size=4, seed=0)
        train(params, config, samples, options)
        runs.append([arr.copy() for _, arr, _ in params.named_arrays()])
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_zero_lr_keeps_weights():
    config, samples = _tiny_setup()
    params = build_model(config, seed=0)
    before = [arr.copy() for _, arr, tr in params.named_arrays() if tr]
    options = TrainOptions(epochs=1, batch_size=4, base_lr=0.0, seed=0)
    history = train(params, config, samples, options)
    after = [arr for _, arr, tr in params.named_arrays() if tr]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)
    assert np.isfinite(history[0].mean_loss)


def test_train_validates_label_arity():
    config, samples = _tiny_setup()
    bad = ModelConfig(**{**config.to_dict(), "d": 7})
    with pytest.raises(ValueError):
        train(build_model(bad, seed=0), bad, samples, TrainOptions(epochs=1))


def test_evaluate_runs_on_predictions():
    config, samples = _tiny_setup()
    params = build_model(config, seed=0)
    report = evaluate(params, config, samples)
    assert len(report.per_au) == 3
    assert 0.0 <= report.average_f1 <= 1.0
    probs = predict(params, config, samples, batch_size=3)
    assert probs.shape == (len(samples), 3)


def test_label_echo_stub_scores_perfect_f1():
    """Feeding the labels themselves as probabilities must give F1 = 1."""
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 2, (30, 5))
    labels[0] = 1          # every AU occurs at least once
    report = report_from_predictions(labels.astype(float), labels)
    assert report.average_f1 == 1.0
