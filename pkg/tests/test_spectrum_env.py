import numpy as np
import pytest

from fedspectrum.errors import FormatError, ParameterError, ShapeError
from fedspectrum.spectrum_env import (
    ChannelGains,
    ChannelProfile,
    EPA_TAPS,
    EVA_TAPS,
    EnergyGrid,
    GridDims,
    OccupancyPattern,
    TrafficParams,
    deserialize_dataset,
    gen_channel,
    gen_occupancy,
    make_dataset,
    rms_delay_spread_ns,
    sense_energy,
    serialize_dataset,
)


def test_grid_dims_validation():
    with pytest.raises(ParameterError):
        GridDims(0, 10)
    with pytest.raises(ParameterError):
        GridDims(10, -1)
    assert GridDims(50, 100).n_rb == 5000


def test_traffic_params_validation():
    with pytest.raises(ParameterError):
        TrafficParams(duty_target=1.5)
    with pytest.raises(ParameterError):
        TrafficParams(persist_time=-0.1)
    with pytest.raises(ParameterError):
        TrafficParams(block_height_mean=0.5)


def test_delay_spreads_match_3gpp_profiles():
    assert rms_delay_spread_ns(EPA_TAPS) == pytest.approx(43.1, abs=0.5)
    assert rms_delay_spread_ns(EVA_TAPS) == pytest.approx(356.7, abs=1.0)


# ---------------------------------------------------------------------------
# gen_occupancy
# ---------------------------------------------------------------------------

def test_occupancy_duty_zero_all_free():
    pat = gen_occupancy(TrafficParams(0.0, 0.9, 4), GridDims(20, 30), 1)
    assert pat.mask.sum() == 0


def test_occupancy_duty_one_all_occupied():
    pat = gen_occupancy(TrafficParams(1.0, 0.9, 4), GridDims(20, 30), 1)
    assert pat.mask.min() == 1


def test_occupancy_default_grid_has_5000_entries():
    pat = gen_occupancy(TrafficParams(0.3, 0.9, 4), GridDims(50, 100), 7)
    assert pat.mask.size == 5000


def test_occupancy_deterministic():
    traffic = TrafficParams(0.4, 0.8, 3)
    a = gen_occupancy(traffic, GridDims(30, 40), 99)
    b = gen_occupancy(traffic, GridDims(30, 40), 99)
    assert np.array_equal(a.mask, b.mask)


def test_occupancy_stationary_fraction_matches_closed_form():
    # Stationary occupancy of the band chain equals duty_target by
    # construction; Monte Carlo over 20 seeds.
    traffic = TrafficParams(0.5, 0.9, 4)
    dims = GridDims(50, 1000)
    means = [gen_occupancy(traffic, dims, s).mask.mean() for s in range(20)]
    assert abs(float(np.mean(means)) - 0.5) <= 0.05


def test_occupancy_persistence_matches_parameter():
    traffic = TrafficParams(0.5, 0.9, 1.0)  # height 1: rows are chains
    dims = GridDims(50, 2000)
    mask = gen_occupancy(traffic, dims, 12).mask.astype(bool)
    stay = mask[:, 1:][mask[:, :-1]]
    assert abs(stay.mean() - 0.9) <= 0.02


def test_occupancy_blocks_are_contiguous_in_frequency():
    # Mean block height 8 on a 64-row grid: occupied cells in any column
    # must form far fewer runs than independent rows would produce.
    traffic = TrafficParams(0.5, 0.9, 8.0)
    mask = gen_occupancy(traffic, GridDims(64, 200), 5).mask
    runs = np.count_nonzero(np.diff(mask, axis=0) != 0, axis=0).mean()
    assert runs < 12  # independent rows would average ~thirty


# ---------------------------------------------------------------------------
# gen_channel
# ---------------------------------------------------------------------------

def test_channel_zero_doppler_frozen_in_time():
    gains = gen_channel(ChannelProfile("eva", 0.0), GridDims(20, 30), 3)
    assert np.allclose(gains.power_gain, gains.power_gain[:, :1])


def test_channel_flat_rows_identical():
    prof = ChannelProfile("flat", 70.0)
    for s in range(5):
        g = gen_channel(prof, GridDims(10, 50), s).power_gain
        assert np.allclose(g, g[:1, :])


# Grid shapes sized so every profile yields ~4e4 effectively independent
# power samples (flat rows are fully correlated; EPA decorrelates over
# ~20 rows, EVA over ~3); the 2% tolerance is then a 4-sigma bound.
@pytest.mark.parametrize("kind,dims,n_grids", [
    ("flat", GridDims(1, 2000), 200),
    ("epa", GridDims(200, 200), 200),
    ("eva", GridDims(200, 200), 25),
])
def test_channel_unit_mean_power_all_profiles(kind, dims, n_grids):
    prof = ChannelProfile(kind, 70.0)
    vals = [gen_channel(prof, dims, (10, s)).power_gain.mean() for s in range(n_grids)]
    assert abs(float(np.mean(vals)) - 1.0) <= 0.02


def _adjacent_freq_corr(kind: str, n_grids: int = 300) -> float:
    cors = []
    for s in range(n_grids):
        p = gen_channel(ChannelProfile(kind, 40.0), GridDims(30, 10), (20, s)).power_gain
        cors.append(np.corrcoef(p[:-1].ravel(), p[1:].ravel())[0, 1])
    return float(np.mean(cors))


def test_channel_epa_more_frequency_coherent_than_eva():
    assert _adjacent_freq_corr("epa") > _adjacent_freq_corr("eva") + 0.1


def _lag1_time_corr(doppler: float, n_grids: int = 300) -> float:
    cors = []
    for s in range(n_grids):
        p = gen_channel(ChannelProfile("eva", doppler), GridDims(10, 30), (30, s)).power_gain
        cors.append(np.corrcoef(p[:, :-1].ravel(), p[:, 1:].ravel())[0, 1])
    return float(np.mean(cors))


def test_channel_doppler_monotonicity():
    assert _lag1_time_corr(0.5) > _lag1_time_corr(70.0) + 0.05


def test_channel_negative_doppler_rejected():
    with pytest.raises(ParameterError):
        ChannelProfile("eva", -1.0)


def test_channel_deterministic():
    prof = ChannelProfile("epa", 15.0)
    a = gen_channel(prof, GridDims(12, 17), 123)
    b = gen_channel(prof, GridDims(12, 17), 123)
    assert np.array_equal(a.power_gain, b.power_gain)


# ---------------------------------------------------------------------------
# sense_energy
# ---------------------------------------------------------------------------

def test_energy_all_free_mean_is_noise_power():
    dims = GridDims(50, 100)
    free = OccupancyPattern(dims, np.zeros(dims.shape, np.uint8))
    gains = gen_channel(ChannelProfile("eva", 40.0), dims, 4)
    grid = sense_energy(free, gains, 10.0, 8, 5)
    assert abs(grid.energy.mean() - 1.0) <= 0.03


def test_energy_zero_noise_hook_exact():
    dims = GridDims(1, 1)
    occupied = OccupancyPattern(dims, np.ones(dims.shape, np.uint8))
    unit = ChannelGains(dims, np.ones(dims.shape))
    grid = sense_energy(occupied, unit, 0.0, 4, 0, noise_power=0.0)
    assert grid.energy[0, 0] == 1.0


def test_energy_snr20_ratio_near_101():
    # Occupied/free mean-energy ratio across channel draws; large grids
    # at high Doppler decorrelate the gain field enough that the 5%
    # tolerance is a multi-sigma bound.
    dims = GridDims(200, 200)
    occ = OccupancyPattern(dims, np.ones(dims.shape, np.uint8))
    free = OccupancyPattern(dims, np.zeros(dims.shape, np.uint8))
    occ_means, free_means = [], []
    for s in range(12):
        gains = gen_channel(ChannelProfile("eva", 70.0), dims, (140, s))
        occ_means.append(sense_energy(occ, gains, 20.0, 8, (141, s)).energy.mean())
        free_means.append(sense_energy(free, gains, 20.0, 8, (142, s)).energy.mean())
    ratio = float(np.mean(occ_means) / np.mean(free_means))
    assert ratio == pytest.approx(101.0, rel=0.05)


@pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
def test_energy_stochastic_ordering(snr_db):
    dims = GridDims(40, 50)
    occ = OccupancyPattern(dims, np.ones(dims.shape, np.uint8))
    free = OccupancyPattern(dims, np.zeros(dims.shape, np.uint8))
    occ_mean = np.mean([
        sense_energy(occ, gen_channel(ChannelProfile("eva", 30.0), dims, (50, s)),
                     snr_db, 8, (51, s)).energy.mean()
        for s in range(10)
    ])
    free_mean = np.mean([
        sense_energy(free, gen_channel(ChannelProfile("eva", 30.0), dims, (52, s)),
                     snr_db, 8, (53, s)).energy.mean()
        for s in range(10)
    ])
    assert occ_mean > free_mean


def test_energy_dimension_mismatch():
    pat = OccupancyPattern(GridDims(4, 5), np.zeros((4, 5), np.uint8))
    gains = ChannelGains(GridDims(4, 6), np.ones((4, 6)))
    with pytest.raises(ShapeError):
        sense_energy(pat, gains, 0.0, 8, 0)


def test_energy_deterministic():
    dims = GridDims(8, 9)
    pat = gen_occupancy(TrafficParams(0.4, 0.9, 2), dims, 1)
    gains = gen_channel(ChannelProfile("epa", 20.0), dims, 2)
    a = sense_energy(pat, gains, 5.0, 8, 77)
    b = sense_energy(pat, gains, 5.0, 8, 77)
    assert np.array_equal(a.energy, b.energy)


# ---------------------------------------------------------------------------
# make_dataset and the snapshot format
# ---------------------------------------------------------------------------

def test_make_dataset_paper_count():
    ds = make_dataset(5000, TrafficParams(0.3, 0.9, 2), ChannelProfile("flat", 10.0),
                      10.0, GridDims(4, 6), 9)
    assert len(ds) == 5000


def test_make_dataset_single_example_duty_zero():
    ds = make_dataset(1, TrafficParams(0.0, 0.9, 2), ChannelProfile("eva", 30.0),
                      10.0, GridDims(6, 7), 3)
    assert len(ds) == 1
    assert ds[0].label.mask.sum() == 0


def test_make_dataset_deterministic():
    args = (3, TrafficParams(0.5, 0.8, 3), ChannelProfile("epa", 25.0), 8.0, GridDims(7, 9), 21)
    a, b = make_dataset(*args), make_dataset(*args)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.input.energy, eb.input.energy)
        assert np.array_equal(ea.label.mask, eb.label.mask)


def test_make_dataset_rejects_zero_patterns():
    with pytest.raises(ParameterError):
        make_dataset(0, TrafficParams(), ChannelProfile(), 10.0, GridDims(4, 4), 1)


def test_dataset_snapshot_roundtrip_bit_exact():
    ds = make_dataset(4, TrafficParams(0.4, 0.9, 3), ChannelProfile("eva", 35.0),
                      12.0, GridDims(9, 11), 5)
    blob = serialize_dataset(ds)
    header = blob.split(b"\n", 1)[0].decode()
    assert header == "fedspectrum-dataset v1 9 11 4"
    back = deserialize_dataset(blob)
    for orig, loaded in zip(ds, back):
        assert np.array_equal(orig.input.energy, loaded.input.energy)
        assert np.array_equal(orig.label.mask, loaded.label.mask)
    assert serialize_dataset(back) == blob


def test_dataset_snapshot_corruption_errors():
    ds = make_dataset(2, TrafficParams(0.4, 0.9, 3), ChannelProfile("eva", 35.0),
                      12.0, GridDims(5, 6), 5)
    blob = serialize_dataset(ds)
    with pytest.raises(FormatError):
        deserialize_dataset(b"")
    with pytest.raises(FormatError):
        deserialize_dataset(b"wrong-magic 5 6 2\n" + blob.split(b"\n", 1)[1])
    with pytest.raises(FormatError):
        deserialize_dataset(blob[:-10])  # truncated payload


def test_dataset_mixed_dims_rejected():
    from fedspectrum.spectrum_env import Dataset, LabeledExample

    small = make_dataset(1, TrafficParams(), ChannelProfile(), 10.0, GridDims(4, 4), 1)
    big = make_dataset(1, TrafficParams(), ChannelProfile(), 10.0, GridDims(5, 5), 2)
    with pytest.raises(ShapeError):
        Dataset((small[0], big[0]))


def test_energy_grid_rejects_negative_values():
    with pytest.raises(Exception):
        EnergyGrid(GridDims(2, 2), np.array([[1.0, -0.5], [0.0, 2.0]]))
