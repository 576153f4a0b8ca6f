import numpy as np
import pytest

from fedspectrum.attacks import ssdf_poison
from fedspectrum.defense import (
    DefenseConfig,
    accordance_filter,
    decision_accordance,
    dp_noise,
    micro_model_clean,
    robust_aggregate,
)
from fedspectrum.errors import AggregationError, ConfigError, ParameterError, ShapeError
from fedspectrum.federation import fedavg
from fedspectrum.learner import (
    INIT_RANDOM,
    ModelArch,
    ModelParams,
    TrainConfig,
    forward,
    init_model,
)
from fedspectrum.rng import child_rng
from fedspectrum.spectrum_env import (
    ChannelProfile,
    Dataset,
    EnergyGrid,
    GridDims,
    TrafficParams,
    make_dataset,
)

ARCH = ModelArch()


def _validation(n=6, dims=GridDims(10, 20), seed=1, duty=0.4):
    return make_dataset(n, TrafficParams(duty, 0.9, 3), ChannelProfile("eva", 40.0),
                        10.0, dims, seed)


def _params_equal(a, b):
    return all(
        np.array_equal(wa, wb) and np.array_equal(ba, bb)
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers)
    )


def _scalar_models(values):
    """1-parameter-per-tensor models whose coordinates all equal value."""
    arch = ModelArch(hidden_layers=1, channels=(1,), kernel=(1, 1))
    out = []
    for v in values:
        base = init_model(arch, "zero", 0)
        out.append(base.map(lambda t: np.full_like(t, float(v))))
    return out


def test_defense_config_validation():
    with pytest.raises(ParameterError):
        DefenseConfig(accordance_threshold_pct=101)
    with pytest.raises(ParameterError):
        DefenseConfig(trim_fraction=0.5)
    with pytest.raises(ParameterError):
        DefenseConfig(aggregation="krum")
    with pytest.raises(ParameterError):
        DefenseConfig(filter_decision_threshold=1.5)


# ---------------------------------------------------------------------------
# decision_accordance
# ---------------------------------------------------------------------------

def test_accordance_identical_and_complementary():
    d = child_rng(1).integers(0, 2, (4, 5, 6)).astype(np.uint8)
    assert decision_accordance(d, d) == 1.0
    assert decision_accordance(d, 1 - d) == 0.0


def test_accordance_half_agreement():
    a = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1], np.uint8)
    b = np.array([0, 0, 0, 0, 0, 0, 0, 0, 0, 0], np.uint8)
    assert decision_accordance(a, b) == 0.5


def test_accordance_shape_mismatch():
    with pytest.raises(ShapeError):
        decision_accordance(np.zeros((2, 3)), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# accordance_filter
# ---------------------------------------------------------------------------

def test_filter_identical_updates_all_accepted():
    model = init_model(ARCH, INIT_RANDOM, 2)
    updates = [(i, model) for i in range(3)]
    kept, report = accordance_filter(updates, _validation(), 65.0)
    assert [i for i, _ in kept] == [0, 1, 2]
    assert np.allclose(report.accordance, 1.0)


def test_filter_single_update_trivially_accepted():
    model = init_model(ARCH, INIT_RANDOM, 3)
    kept, report = accordance_filter([(7, model)], _validation(), 99.0)
    assert [i for i, _ in kept] == [7]
    assert report.mean_accordance[7] == 1.0
    assert report.accordance.shape == (1, 1)


def test_filter_empty_validation_rejected():
    model = init_model(ARCH, INIT_RANDOM, 4)
    with pytest.raises(ConfigError):
        accordance_filter([(0, model), (1, model)], Dataset(()), 65.0)


def test_filter_matrix_invariants_fuzzed():
    validation = _validation(n=3, dims=GridDims(8, 10))
    for trial in range(10):
        updates = [(i, init_model(ARCH, INIT_RANDOM, (trial, i))) for i in range(4)]
        _, report = accordance_filter(updates, validation, 50.0)
        acc = report.accordance
        assert np.array_equal(acc, acc.T)
        assert np.allclose(np.diag(acc), 1.0)
        assert acc.min() >= 0.0 and acc.max() <= 1.0
        assert set(report.accepted) | set(report.rejected) == {0, 1, 2, 3}


def test_filter_threshold_monotonicity_fuzzed():
    validation = _validation(n=3, dims=GridDims(8, 10), seed=9)
    rng = child_rng(50)
    for trial in range(25):
        n = int(rng.integers(2, 6))
        updates = [(i, init_model(ARCH, INIT_RANDOM, (60, trial, i))) for i in range(n)]
        t1, t2 = sorted(rng.uniform(0, 100, 2))
        kept_lo, _ = accordance_filter(updates, validation, t1)
        kept_hi, _ = accordance_filter(updates, validation, t2)
        assert {i for i, _ in kept_hi}.issubset({i for i, _ in kept_lo})


def test_filter_poisoned_update_rejected_honest_kept():
    # Two well-trained honest models against one trained on half-forced
    # occupancy labels; the poisoned model's accordance falls below 65%.
    from fedspectrum.learner import train_local

    dims = GridDims(25, 50)
    traffic = TrafficParams(0.6, 0.9, 4)
    cfg = TrainConfig(learning_rate=0.3, local_epochs=30, batch_size=8)
    validation = make_dataset(16, traffic, ChannelProfile("eva", 45.0), 10.0, dims, 70)
    init = init_model(ARCH, INIT_RANDOM, 71)

    updates = []
    for node, doppler in ((1, 35.0), (2, 50.0)):
        ds = make_dataset(8, traffic, ChannelProfile("eva", doppler), 10.0, dims, (72, node))
        updates.append((node, train_local(init, ds, cfg, (73, node))))
    ds = make_dataset(8, traffic, ChannelProfile("eva", 42.0), 10.0, dims, (72, 3))
    poisoned = ssdf_poison(ds, "selfish", 0.5, 74)
    updates.append((3, train_local(init, poisoned, cfg, (73, 3))))

    kept, report = accordance_filter(updates, validation, 65.0, decision_threshold=0.4)
    assert 3 in report.rejected
    assert 1 in report.accepted and 2 in report.accepted


# ---------------------------------------------------------------------------
# micro_model_clean
# ---------------------------------------------------------------------------

def test_clean_single_fold_noop():
    ds = _validation(n=5)
    cleaned, removed = micro_model_clean(ds, 1, ARCH, TrainConfig(), 1)
    assert removed == []
    assert len(cleaned) == len(ds)


def test_clean_rejects_too_many_folds():
    ds = _validation(n=3)
    with pytest.raises(ParameterError):
        micro_model_clean(ds, 4, ARCH, TrainConfig(), 1)


def test_clean_keeps_most_clean_examples():
    dims = GridDims(25, 50)
    traffic = TrafficParams(0.3, 0.9, 4)
    ds = make_dataset(12, traffic, ChannelProfile("eva", 40.0), 10.0, dims, 80)
    cfg = TrainConfig(learning_rate=0.3, local_epochs=20, batch_size=4)
    cleaned, removed = micro_model_clean(ds, 3, ARCH, cfg, 81)
    assert len(removed) / len(ds) < 0.05


def test_clean_discriminates_poisoned_fold():
    # One of three contiguous folds carries 50%-forced-occupied labels;
    # its examples must be removed at a far higher rate than clean ones.
    dims = GridDims(25, 50)
    traffic = TrafficParams(0.3, 0.9, 4)
    cfg = TrainConfig(learning_rate=0.3, local_epochs=20, batch_size=4)
    rates = []
    for seed in (82, 83, 84):
        clean = make_dataset(12, traffic, ChannelProfile("eva", 40.0), 10.0, dims, seed)
        last = ssdf_poison(Dataset(clean.examples[8:12]), "selfish", 0.5, seed + 10)
        mixed = Dataset(clean.examples[:8] + last.examples)
        cleaned, removed = micro_model_clean(mixed, 3, ARCH, cfg, seed + 20)
        poisoned_idx = set(range(8, 12))
        removed_set = set(removed)
        rates.append((
            len(removed_set & poisoned_idx) / 4,
            len(removed_set - poisoned_idx) / 8,
        ))
    med_poison = float(np.median([p for p, _ in rates]))
    med_clean = float(np.median([c for _, c in rates]))
    assert med_poison >= max(2 * med_clean, 0.5)


# ---------------------------------------------------------------------------
# robust_aggregate
# ---------------------------------------------------------------------------

def test_median_simple_values():
    agg = robust_aggregate(_scalar_models([1.0, 2.0, 100.0]), "median")
    for w, b in agg.layers:
        assert np.all(w == 2.0)


def test_trimmed_mean_zero_equals_fedavg():
    models = [init_model(ARCH, INIT_RANDOM, (90, i)) for i in range(4)]
    trimmed = robust_aggregate(models, "trimmed_mean", trim_fraction=0.0)
    plain = fedavg(models)
    for (wt, bt), (wp, bp) in zip(trimmed.layers, plain.layers):
        assert np.allclose(wt, wp, atol=1e-12)
        assert np.allclose(bt, bp, atol=1e-12)


def test_median_bounded_by_honest_pair():
    rng = child_rng(91)
    honest1 = init_model(ARCH, INIT_RANDOM, 92)
    honest2 = init_model(ARCH, INIT_RANDOM, 93)
    byzantine = honest1.map(lambda t: t + rng.normal(0, 100, t.shape))
    agg = robust_aggregate([honest1, honest2, byzantine], "median")
    for li in range(len(agg.layers)):
        lo = np.minimum(honest1.layers[li][0], honest2.layers[li][0])
        hi = np.maximum(honest1.layers[li][0], honest2.layers[li][0])
        w = agg.layers[li][0]
        assert np.all(w >= lo - 1e-12) and np.all(w <= hi + 1e-12)


def test_median_permutation_invariant_and_bounded():
    models = [init_model(ARCH, INIT_RANDOM, (94, i)) for i in range(5)]
    a = robust_aggregate(models, "median")
    b = robust_aggregate(models[::-1], "median")
    assert _params_equal(a, b)
    stacked = np.stack([m.layers[0][0] for m in models])
    assert np.all(a.layers[0][0] >= stacked.min(axis=0))
    assert np.all(a.layers[0][0] <= stacked.max(axis=0))


def test_robust_aggregate_arch_mismatch():
    small = init_model(ModelArch(hidden_layers=1, channels=(2,), kernel=(3, 3)), INIT_RANDOM, 1)
    big = init_model(ARCH, INIT_RANDOM, 2)
    with pytest.raises(AggregationError):
        robust_aggregate([small, big], "median")


def test_trimmed_mean_rejects_overtrim():
    models = _scalar_models([1.0, 2.0])
    with pytest.raises(AggregationError):
        robust_aggregate(models, "trimmed_mean", trim_fraction=0.4)


# ---------------------------------------------------------------------------
# dp_noise
# ---------------------------------------------------------------------------

def test_dp_zero_sigma_identity():
    model = init_model(ARCH, INIT_RANDOM, 95)
    assert dp_noise(model, 0.0, 1) is model


def test_dp_model_noise_moment():
    arch = ModelArch(hidden_layers=2, channels=(20, 20), kernel=(5, 5))
    model = init_model(arch, INIT_RANDOM, 96)
    noisy = dp_noise(model, 0.2, 97)
    diffs = np.concatenate([
        np.concatenate([(wn - wm).ravel(), (bn - bm).ravel()])
        for (wn, bn), (wm, bm) in zip(noisy.layers, model.layers)
    ])
    assert diffs.std() == pytest.approx(0.2, rel=0.05)


def test_dp_energy_clamped_non_negative():
    grid = _validation(n=1)[0].input
    for sigma in (0.5, 5.0, 50.0):
        noisy = dp_noise(grid, sigma, 98)
        assert noisy.energy.min() >= 0.0


def test_dp_small_sigma_decision_stability():
    # A converged model's decisions barely move under tiny DP noise.
    from fedspectrum.learner import train_local

    dims = GridDims(25, 50)
    traffic = TrafficParams(0.5, 0.9, 4)
    ds = make_dataset(8, traffic, ChannelProfile("eva", 40.0), 10.0, dims, 99)
    cfg = TrainConfig(learning_rate=0.3, local_epochs=20, batch_size=8)
    model = train_local(init_model(ARCH, INIT_RANDOM, 100), ds, cfg, 101)
    grid = _validation(n=1, dims=dims, seed=102)[0].input
    base = forward(model, grid) >= 0.5
    noisy = dp_noise(model, 1e-3, 103)
    flipped = np.mean((forward(noisy, grid) >= 0.5) != base)
    assert flipped < 0.01
