import math

import numpy as np
import pytest

from attachrec.features import FEATURE_NAMES, EncodedMessage, Vocabulary
from attachrec.io import FormatError
from attachrec.neural import (
    Adam, ModelConfig, PointwiseModel, TermRankingModel, TrainingConfig, TrainingPair, _pair_terms,
    compute_loss, cut_at_eor, data_loss, formulate_query_cnn, formulate_query_pointwise, init_model,
    input_mask, load_model, pointwise_loss, save_model, sweep_threshold, target_distribution, train,
    train_pointwise, window_ids, with_ablation,
)
from attachrec.pipeline import split_instances, training_pairs

from oracles import f1_best_threshold

SMALL = ModelConfig(context_width=1, embedding_dim=3, hidden_dims=(4, 5), vocab_size=12)


def encoded(tokens, vocab_terms, seed=0, n_feat=len(FEATURE_NAMES)):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(vocab_terms)
    return EncodedMessage("m", tuple(tokens), np.array([vocab.lookup(t) for t in tokens]),
                          rng.random((len(tokens), n_feat)))


TERMS = list("abcdefghij")


def small_pairs():
    return [
        TrainingPair("p0", encoded("a b a c".split(), TERMS, 0), frozenset({"a", "b"}), 1.0),
        TrainingPair("p1", encoded("d e f".split(), TERMS, 1), frozenset({"f"}), 0.5),
        TrainingPair("p2", encoded("g".split(), TERMS, 2), frozenset({"g"}), 0.25),
    ]


# -- initialisation ---------------------------------------------------------

def test_init_deterministic_and_seeded():
    a, b, c = init_model(SMALL, 1), init_model(SMALL, 1), init_model(SMALL, 2)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params if "W" in k)


def test_glorot_bounds_and_zero_biases():
    model = init_model(SMALL, 0)
    for name, value in model.params.items():
        if name.endswith(("b1", "b2", "b3")):
            assert not value.any()
        else:
            fan_in, fan_out = value.shape
            assert np.abs(value).max() <= math.sqrt(6 / (fan_in + fan_out))


def test_parameter_shapes_at_default_dims():
    cfg = ModelConfig(vocab_size=100)
    model = init_model(cfg, 0)
    assert cfg.input_dim == 7 * 128 + 17
    assert model.params["g.W1"].shape == (cfg.input_dim, 512)
    assert model.params["h.W2"].shape == (512, 512)
    assert model.params["embedding"].shape == (100, 128)


def test_window_ids_pad():
    np.testing.assert_array_equal(window_ids(np.array([5, 6]), 1), [[0, 5, 6], [5, 6, 0]])


# -- forward ------------------------------------------------------------------

def test_forward_normalized():
    model = init_model(SMALL, 0)
    for pair in small_pairs():
        dist = model.forward(pair.message)
        assert len(dist.probs) == len(pair.message) + 1
        assert abs(dist.probs.sum() - 1) < 1e-9


def test_zero_parameters_give_uniform():
    model = init_model(SMALL, 0)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    dist = model.forward(small_pairs()[0].message)
    np.testing.assert_allclose(dist.probs, 1 / 5, atol=1e-15)


def test_identical_windows_score_equal():
    msg = EncodedMessage("m", ("x", "a", "x", "a", "x"), np.array([2, 3, 2, 3, 2]), np.zeros((5, 17)))
    g, _, _ = init_model(SMALL, 0).raw_scores([msg])
    assert g[1] == g[3]


def test_dropout_only_in_training():
    model = init_model(SMALL, 0)
    enc = small_pairs()[0].message
    a = model.forward(enc).probs
    b = model.forward(enc, train=False, rng=np.random.default_rng(1)).probs
    c = model.forward(enc, train=True, rng=np.random.default_rng(1)).probs
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


# -- targets and losses -------------------------------------------------------

def test_target_distribution_example():
    q = target_distribution("a b a c".split(), {"a", "b"}, 0.95)
    np.testing.assert_allclose(q, [0.2375, 0.475, 0.2375, 0.0, 0.05], atol=1e-15)
    assert abs(q.sum() - 1) < 1e-12


def test_target_all_terms_and_boundary():
    q = target_distribution("a b a".split(), {"a", "b"}, 0.95)
    assert q[-1] == pytest.approx(0.05) and abs(q.sum() - 1) < 1e-12
    assert target_distribution("a b".split(), {"a"}, 1.0)[-1] == 0.0


def test_target_rejects_absent_term():
    with pytest.raises(ValueError):
        target_distribution(["a"], {"z"})


def test_target_sums_on_fixture(planted, planted_silver):
    vocab = Vocabulary.from_stats(planted.stats)
    for pair in training_pairs(planted, planted_silver, vocab):
        assert abs(target_distribution(pair.message.tokens, pair.silver).sum() - 1) < 1e-12


def test_xent_minimum_is_entropy():
    q = target_distribution(["a", "b"], {"a", "b"}, 0.95)
    pair = TrainingPair("p", encoded(["a", "b"], TERMS), frozenset({"a", "b"}), 1.0)
    xent, _, _, _ = _pair_terms(pair, np.log(q[:2]), math.log(q[2]), 0.95)
    assert xent == pytest.approx(-np.sum(q * np.log(q)), abs=1e-12)


def test_cutoff_zero_point():
    pair = TrainingPair("p", encoded("a b c".split(), TERMS), frozenset({"a", "b"}), 1.0)
    g = np.array([0.7, 0.3, 2.0])
    _, cutoff, _, _ = _pair_terms(pair, g, 0.3, 0.95)
    assert cutoff == 0.0
    _, cutoff, _, _ = _pair_terms(pair, g, 1.3, 0.95)
    assert cutoff == pytest.approx(1.0)


def test_score_weighting():
    model = init_model(SMALL, 0)
    cfg = TrainingConfig()
    pair = small_pairs()[0]
    full, _ = compute_loss(model, [pair], cfg, regularize=False, with_grad=False)
    half = TrainingPair("h", pair.message, pair.silver, 0.5)
    weighted, _ = compute_loss(model, [half], cfg, regularize=False, with_grad=False)
    assert weighted == pytest.approx(full / 2)


def test_regularizer_literal_coefficient():
    model = init_model(SMALL, 0)
    cfg = TrainingConfig()
    assert cfg.regularization == 5.0
    with_reg, _ = compute_loss(model, small_pairs(), cfg, with_grad=False)
    without, _ = compute_loss(model, small_pairs(), cfg, regularize=False, with_grad=False)
    sq = sum(np.sum(v * v) for k, v in model.params.items() if k == "embedding" or ".W" in k)
    assert with_reg - without == pytest.approx(5.0 * sq)
    assert TrainingConfig(reg_coef=0.05).regularization == 0.05


def numeric_grad_check(model, loss_fn, pairs, cfg, entries=None, seed=0):
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = loss_fn(model, pairs, cfg, None)
    rng = np.random.default_rng(seed)
    worst = {}
    for name, value in model.params.items():
        flat = value.reshape(-1)
        idx = range(flat.size) if entries is None else rng.choice(flat.size, min(entries, flat.size), replace=False)
        if name == "embedding" and entries is not None:
            used = np.unique(np.concatenate([p.message.token_ids for p in pairs]))
            rows = rng.choice(used, min(len(used), 4), replace=False)
            idx = [r * value.shape[1] + c for r in rows for c in rng.choice(value.shape[1], 4, replace=False)]
        err = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + 1e-5
            up, _ = loss_fn(model, pairs, cfg, None, with_grad=False)
            flat[i] = old - 1e-5
            down, _ = loss_fn(model, pairs, cfg, None, with_grad=False)
            flat[i] = old
            num = (up - down) / 2e-5
            ana = grads[name].reshape(-1)[i]
            denom = max(abs(num), abs(ana), 1e-8)
            err = max(err, abs(num - ana) / denom)
        worst[name] = err
    return worst


def test_gradient_check_small_full():
    model = init_model(SMALL, 3)
    worst = numeric_grad_check(model, compute_loss, small_pairs(), TrainingConfig(reg_coef=0.01))
    assert set(worst) == set(model.params)
    assert max(worst.values()) < 1e-4, worst


def test_gradient_check_pointwise():
    model = PointwiseModel.init(SMALL, 3)
    worst = numeric_grad_check(model, pointwise_loss, small_pairs(), TrainingConfig(reg_coef=0.01))
    assert max(worst.values()) < 1e-4, worst


def test_gradient_check_with_ablation():
    model = init_model(with_ablation(SMALL, "context"), 3)
    worst = numeric_grad_check(model, compute_loss, small_pairs(), TrainingConfig(reg_coef=0.01))
    assert max(worst.values()) < 1e-4, worst


def test_adam_single_step():
    params = {"w": np.array([1.0, -2.0])}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"w": np.array([0.5, -4.0])})
    # first bias-corrected step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(params["w"], [0.9, -1.9], atol=1e-7)


# -- ablations --------------------------------------------------------------

def test_input_mask_categories():
    cfg = ModelConfig(context_width=1, embedding_dim=2, hidden_dims=(2, 2), vocab_size=4)
    base = 3 * 2
    assert input_mask(cfg).all()
    term = input_mask(with_ablation(cfg, "term"))
    assert term[:base].tolist() == [1, 1, 0, 0, 1, 1] and term[base:].all()
    ctx = input_mask(with_ablation(cfg, "context"))
    assert ctx[:base].tolist() == [0, 0, 1, 1, 0, 0]
    pos = input_mask(with_ablation(cfg, "pos"))
    assert pos[base:base + 3].tolist() == [0, 0, 0] and pos[base + 3:].all()
    with pytest.raises(ValueError):
        with_ablation(cfg, "nonsense")


# -- query formulation --------------------------------------------------------

def test_cut_at_eor_example():
    tokens = ["initech", "initech", "transition", "david"]
    assert cut_at_eor(tokens, np.array([0.20, 0.18, 0.15, 0.07]), 0.10) == ["initech", "transition"]
    assert cut_at_eor(tokens, np.array([0.20, 0.18, 0.15, 0.07]), 0.5) == []
    assert cut_at_eor(["a", "b"], np.array([2.0, 1.0]), 0.0) == ["a", "b"]


def test_cnn_query_terms_come_from_message():
    model = init_model(SMALL, 0)
    enc = small_pairs()[0].message
    assert set(formulate_query_cnn(model, enc)) <= set(enc.tokens)


def test_pointwise_threshold():
    model = PointwiseModel.init(SMALL, 0)
    enc = encoded(["a", "b"], TERMS)
    probs = model.probabilities(enc)
    mid = float(np.mean(probs))
    assert set(formulate_query_pointwise(model, enc, mid)) == {t for t, p in zip("ab", probs) if p > mid}
    assert formulate_query_pointwise(model, enc, 1.0) == []


def test_f1_sweep_separable():
    scores = [{"a": 0.9, "b": 0.2}, {"c": 0.7, "d": 0.4}, {"e": 0.55}]
    labels = [{"a"}, {"c"}, {"e"}]
    t, f1 = sweep_threshold(scores, labels)
    assert f1 == 1.0
    flat_s = [s for sc in scores for s in sc.values()]
    flat_y = [term in lab for sc, lab in zip(scores, labels) for term in sc]
    oracle_f1, _ = f1_best_threshold(flat_s, flat_y)
    assert oracle_f1 == f1
    assert all((s > t) == y for s, y in zip(flat_s, flat_y))


# -- training -----------------------------------------------------------------

def test_training_reduces_training_loss_five_pairs():
    pairs = small_pairs() + [
        TrainingPair("p3", encoded("h i".split(), TERMS, 3), frozenset({"i"}), 1.0),
        TrainingPair("p4", encoded("j a j".split(), TERMS, 4), frozenset({"j"}), 0.5),
    ]
    cfg = ModelConfig(context_width=1, embedding_dim=8, hidden_dims=(16, 16), vocab_size=12)
    model = train(pairs, pairs[:1], cfg, TrainingConfig(seed=0, learning_rate=1e-3))
    losses = model.metadata["train_losses"]
    assert len(losses) == 31
    assert losses[30] < losses[0]


def small_planted_setup(planted, planted_silver):
    split = split_instances(planted.instances)
    vocab = Vocabulary.from_stats(planted.stats)
    ids = lambda part: {i.instance_id for i in part}
    tr = training_pairs(planted, [s for s in planted_silver if s.instance_id in ids(split.train)], vocab)
    va = training_pairs(planted, [s for s in planted_silver if s.instance_id in ids(split.validation)], vocab)
    cfg = ModelConfig(context_width=1, embedding_dim=16, hidden_dims=(32, 32), vocab_size=len(vocab))
    return tr, va, cfg, vocab


def test_selected_model_not_worse_than_initial(planted, planted_silver):
    tr, va, cfg, vocab = small_planted_setup(planted, planted_silver)
    tcfg = TrainingConfig(epochs=10, learning_rate=1e-3, seed=2)
    model = train(tr, va, cfg, tcfg, vocab.terms)
    initial = init_model(cfg, 2)
    assert data_loss(model, va, tcfg) <= data_loss(initial, va, tcfg)
    best = model.metadata["best_epoch"]
    assert best >= 1 and model.metadata["val_losses"][best] == min(model.metadata["val_losses"][1:])


def test_training_deterministic(tmp_path, planted, planted_silver):
    tr, va, cfg, vocab = small_planted_setup(planted, planted_silver)
    tcfg = TrainingConfig(epochs=3, learning_rate=1e-3, seed=5)
    for name in ("a", "b"):
        save_model(train(tr, va, cfg, tcfg, vocab.terms), tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_pointwise_training_sets_threshold(planted, planted_silver):
    tr, va, cfg, vocab = small_planted_setup(planted, planted_silver)
    model = train_pointwise(tr, va, cfg, TrainingConfig(epochs=2, learning_rate=1e-3), vocab.terms)
    assert 0.0 <= model.metadata["threshold"] < 1.0
    assert 0.0 <= model.metadata["val_f1"] <= 1.0


def test_training_rejects_empty_sets():
    with pytest.raises(Exception):
        train([], small_pairs(), SMALL, TrainingConfig())


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    model = init_model(SMALL, 4, TERMS)
    model.metadata["best_epoch"] = 7
    save_model(model, tmp_path / "m.ckpt")
    again = load_model(tmp_path / "m.ckpt")
    assert isinstance(again, TermRankingModel)
    assert again.config == SMALL and again.vocab_terms == TERMS and again.metadata["best_epoch"] == 7
    enc = small_pairs()[0].message
    np.testing.assert_array_equal(again.forward(enc).probs, model.forward(enc).probs)


def test_checkpoint_rejects_other_containers(tmp_path):
    path = tmp_path / "m.ckpt"
    save_model(init_model(SMALL, 0), path)
    data = bytearray(path.read_bytes())
    data[8] += 1  # bump the version field
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_model(path)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainingConfig(alpha_eor=0.0)
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


@pytest.mark.slow
def test_ablation_on_planted_signal(planted_corpus):
    """Signature terms are recognisable both by their embeddings and by their
    collection statistics; part-of-speech flags from a constant tagger carry
    nothing."""
    from attachrec.evaluation import evaluate_run, relative_mrr_delta
    from attachrec.features import ConstantTagger
    from attachrec.pipeline import Collection, cnn_formulator

    coll = Collection(planted_corpus, tagger=ConstantTagger())
    silver = coll.silver(k=10, seed=0)
    split = split_instances(coll.instances)
    vocab = Vocabulary.from_stats(coll.stats)
    ids = lambda part: {i.instance_id for i in part}
    tr = training_pairs(coll, [s for s in silver if s.instance_id in ids(split.train)], vocab)
    va = training_pairs(coll, [s for s in silver if s.instance_id in ids(split.validation)], vocab)
    base = ModelConfig(vocab_size=len(vocab))
    tcfg = TrainingConfig(learning_rate=1e-3, reg_coef=0.0, seed=0)

    def run(ablate):
        cfg = base
        for cat in ablate:
            cfg = with_ablation(cfg, cat)
        model = train(tr, va, cfg, tcfg, vocab.terms)
        return evaluate_run(split.test, {"cnn": cnn_formulator(model, coll, vocab)}, coll.index_for).aggregates("cnn")["mrr"]

    full = run(())
    # masking a constant column may still shift the optimisation path a little
    assert abs(relative_mrr_delta(run(("pos",)), full)) <= 0.1
    # either source alone suffices; removing both costs a lot
    assert relative_mrr_delta(run(("collection", "term+context")), full) <= -0.1
    assert run(("collection", "message", "term+context")) < 0.1


@pytest.mark.slow
def test_planted_signal_is_learnable_with_larger_steps(planted_corpus):
    # control for the acceptance run at the default step size: with enough
    # movement away from the initialisation the model recovers the signatures
    from attachrec.baselines import FormulationConfig
    from attachrec.pipeline import Collection, run_experiment

    full = FormulationConfig("full", "both")
    res = run_experiment(Collection(planted_corpus), ModelConfig(),
                         TrainingConfig(learning_rate=1e-3, reg_coef=0.0), baselines=[full])
    cnn = res.report.aggregates("cnn")["mrr"]
    assert cnn >= 0.8 * res.mean_best_silver_rr
    assert cnn > res.report.aggregates(full.name)["mrr"]
