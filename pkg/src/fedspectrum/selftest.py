"""Built-in property checks behind the `selftest` CLI subcommand.

A trimmed-down version of the test suite that needs no pytest: gradient
correctness, aggregation identities, detector calibration, occupancy
stationarity, and filter monotonicity. Prints one PASS/FAIL line per
check and returns a nonzero exit code on any failure.
"""
from __future__ import annotations

import numpy as np

from .defense import accordance_filter
from .federation import fedavg
from .learner import (
    INIT_RANDOM,
    ModelArch,
    energy_detector,
    init_model,
    loss_and_grads,
    serialize_model,
    deserialize_model,
)
from .metrics import compute_pd_pfa
from .rng import child_rng
from .spectrum_env import (
    ChannelProfile,
    Dataset,
    EnergyGrid,
    GridDims,
    LabeledExample,
    OccupancyPattern,
    TrafficParams,
    gen_channel,
    gen_occupancy,
    make_dataset,
    sense_energy,
)


def _flatten(model):
    return np.concatenate([t.ravel() for w, b in model.layers for t in (w, b)])


def _check_gradient(n_pairs: int) -> tuple[bool, str]:
    arch = ModelArch(hidden_layers=2, channels=(2, 2), kernel=(3, 3), log_input=False)
    dims = GridDims(5, 7)
    worst = 0.0
    for pair in range(n_pairs):
        rng = child_rng(900, pair)
        model = init_model(arch, INIT_RANDOM, (901, pair))
        energy = rng.uniform(0.1, 3.0, size=dims.shape)
        mask = rng.integers(0, 2, size=dims.shape).astype(np.uint8)
        batch = [LabeledExample(EnergyGrid(dims, energy), OccupancyPattern(dims, mask))]
        _, grads = loss_and_grads(model, batch)
        flat_grads = np.concatenate([t.ravel() for dw, db in grads for t in (dw, db)])

        eps = 1e-5
        layers = [(w.copy(), b.copy()) for w, b in model.layers]
        idx = 0
        for li, (w, b) in enumerate(layers):
            for tensor_i, tensor in enumerate((w, b)):
                flat = tensor.reshape(-1)
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + eps
                    lp, _ = loss_and_grads(_rebuild(arch, layers), batch)
                    flat[j] = orig - eps
                    lm, _ = loss_and_grads(_rebuild(arch, layers), batch)
                    flat[j] = orig
                    fd = (lp - lm) / (2 * eps)
                    g = flat_grads[idx]
                    scale = max(abs(fd), abs(g))
                    err = abs(fd - g) / scale if scale > 1e-8 else abs(fd - g)
                    worst = max(worst, err)
                    idx += 1
    ok = worst <= 1e-4
    return ok, f"max gradient error {worst:.2e}"


def _rebuild(arch, layers):
    from .learner import ModelParams

    return ModelParams(arch, tuple((w.copy(), b.copy()) for w, b in layers))


def _check_fedavg() -> tuple[bool, str]:
    arch = ModelArch(hidden_layers=1, channels=(2,), kernel=(1, 1))
    m = init_model(arch, INIT_RANDOM, 7)
    rep = fedavg([m, m, m])
    ok = all(
        np.array_equal(a, b)
        for (a, _), (b, _) in zip(rep.layers, m.layers)
    ) and all(
        np.array_equal(ab, bb)
        for (_, ab), (_, bb) in zip(rep.layers, m.layers)
    )
    neg = m.map(lambda t: -t)
    zero = fedavg([m, neg])
    ok = ok and all(
        not z.any() for w, b in zero.layers for z in (w, b)
    )
    return ok, "replication and mirror identities"


def _check_detector() -> tuple[bool, str]:
    dims = GridDims(100, 100)
    free = OccupancyPattern(dims, np.zeros(dims.shape, dtype=np.uint8))
    flat = ChannelProfile(kind="flat", doppler_hz=70.0)
    cal = sense_energy(free, gen_channel(flat, dims, 11), 0.0, 8, 12)
    lam = float(np.quantile(cal.energy, 0.9))
    fresh = sense_energy(free, gen_channel(flat, dims, 13), 0.0, 8, 14)
    pfa = compute_pd_pfa(energy_detector(fresh, lam), free).p_fa
    ok = abs(pfa - 0.10) <= 0.02
    return ok, f"P_fa {pfa:.3f} at the 90th-percentile threshold"


def _check_occupancy() -> tuple[bool, str]:
    traffic = TrafficParams(duty_target=0.5, persist_time=0.9, block_height_mean=4)
    dims = GridDims(50, 400)
    means = [
        gen_occupancy(traffic, dims, (20, s)).mask.mean() for s in range(10)
    ]
    err = abs(float(np.mean(means)) - 0.5)
    return err <= 0.05, f"occupancy {np.mean(means):.3f} vs duty 0.5"


def _check_filter_monotone() -> tuple[bool, str]:
    arch = ModelArch(hidden_layers=1, channels=(2,), kernel=(3, 3))
    validation = make_dataset(3, TrafficParams(0.4, 0.9, 3), ChannelProfile("eva", 40.0),
                              10.0, GridDims(10, 20), 31)
    updates = [(i, init_model(arch, INIT_RANDOM, (32, i))) for i in range(4)]
    kept_lo, _ = accordance_filter(updates, validation, 40.0)
    kept_hi, _ = accordance_filter(updates, validation, 70.0)
    ids_lo = {i for i, _ in kept_lo}
    ids_hi = {i for i, _ in kept_hi}
    return ids_hi.issubset(ids_lo), f"accepted {sorted(ids_hi)} subset of {sorted(ids_lo)}"


def _check_roundtrip() -> tuple[bool, str]:
    model = init_model(ModelArch(), INIT_RANDOM, 77)
    again = deserialize_model(serialize_model(model))
    ok = all(
        np.array_equal(w1, w2) and np.array_equal(b1, b2)
        for (w1, b1), (w2, b2) in zip(model.layers, again.layers)
    )
    return ok, "model snapshot round-trip"


def run(fast: bool = False) -> int:
    checks = [
        ("fedavg identities", _check_fedavg),
        ("model round-trip", _check_roundtrip),
        ("occupancy stationarity", _check_occupancy),
        ("detector calibration", _check_detector),
        ("filter monotonicity", _check_filter_monotone),
    ]
    if not fast:
        checks.insert(0, ("gradient vs finite differences", lambda: _check_gradient(2)))
    failures = 0
    for name, fn in checks:
        ok, detail = fn()
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0
