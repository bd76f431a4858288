import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiervec.device import (BUILTIN_PROFILES, Device, DeviceProfile, IoStats,
                            StorageRegion, effective_bandwidth, load_profile,
                            mixed_workload_throughput, save_profile,
                            simulate_time)


@pytest.fixture
def region():
    return StorageRegion(bytes(range(256)) * 64)  # 16 KiB


def make_profile(block, bw=1e9, iops=1e6, lat=1e-6, ovh=0.0):
    return DeviceProfile("test", block, bw, iops, lat, ovh)


def test_read_charges_whole_blocks(region):
    dev = Device(make_profile(64))
    st_ = IoStats()
    dev.read(region, 0, 100, st_)
    assert st_.bytes_charged == 128  # ceil(100/64) * 64
    assert st_.bytes_requested == 100
    assert st_.ops == 1


def test_read_ssd_block_amplifies_small_payload(region):
    dev = Device(BUILTIN_PROFILES["ssd"])
    st_ = IoStats()
    dev.read(region, 0, 100, st_)
    assert st_.bytes_charged == 4096


def test_read_aligned_payload_not_amplified(region):
    dev = Device(make_profile(256))
    st_ = IoStats()
    dev.read(region, 0, 256, st_)
    assert st_.bytes_charged == 256


def test_small_op_threshold(region):
    dev = Device(make_profile(64))
    st_ = IoStats()
    dev.read(region, 0, 511, st_)
    dev.read(region, 0, 512, st_)
    assert st_.small_ops == 1


def test_read_out_of_range(region):
    dev = Device(make_profile(64))
    with pytest.raises(IndexError):
        dev.read(region, region.length - 10, 11, IoStats())
    with pytest.raises(ValueError):
        dev.read(region, 0, 0, IoStats())


def test_read_returns_exact_bytes(region):
    dev = Device(make_profile(64))
    got = dev.read(region, 3, 5, IoStats())
    assert got.tobytes() == bytes(range(256))[3:8]


def test_read_many_matches_loop(region):
    dev = Device(make_profile(64))
    offsets = np.array([0, 100, 300], dtype=np.int64)
    st_batch, st_loop = IoStats(), IoStats()
    batch = dev.read_many(region, offsets, 40, st_batch)
    rows = [dev.read(region, int(o), 40, st_loop) for o in offsets]
    assert st_batch == st_loop
    for got, want in zip(batch, rows):
        assert np.array_equal(got, want)


def test_stats_merge():
    a = IoStats(1, 10, 64, 1)
    a.merge(IoStats(2, 20, 128, 0))
    assert a == IoStats(3, 30, 192, 1)


def test_simulate_time_iops_bound():
    p = make_profile(64, bw=1e12, iops=1e6, lat=1e-9)
    st_ = IoStats(ops=100, bytes_requested=100, bytes_charged=6400)
    assert simulate_time(st_, p, inflight_depth=10 ** 6) == pytest.approx(1e-4)


def test_simulate_time_bandwidth_bound():
    p = make_profile(64, bw=5.3e9, iops=1e9, lat=1e-9)
    st_ = IoStats(ops=1, bytes_requested=int(5.3e9), bytes_charged=int(5.3e9))
    assert simulate_time(st_, p, inflight_depth=100) == pytest.approx(1.0)


def test_simulate_time_latency_serializes_at_depth_one():
    p = BUILTIN_PROFILES["ssd"]  # latency 70 us
    st_ = IoStats(ops=100, bytes_requested=100 * 4096, bytes_charged=100 * 4096)
    assert simulate_time(st_, p, 1) == pytest.approx(7.0e-3)


def test_simulate_time_rejects_bad_depth():
    with pytest.raises(ValueError):
        simulate_time(IoStats(), BUILTIN_PROFILES["ssd"], 0)


def test_effective_bandwidth_anchors():
    ssd, cxl, nvm = (BUILTIN_PROFILES[n] for n in ("ssd", "cxl", "nvm"))
    assert effective_bandwidth(cxl, 128) >= 0.9 * cxl.bandwidth_bytes_per_s
    assert effective_bandwidth(nvm, 256) >= 0.9 * nvm.bandwidth_bytes_per_s
    assert effective_bandwidth(ssd, 512) <= 0.15 * ssd.bandwidth_bytes_per_s
    assert effective_bandwidth(ssd, 4096) == pytest.approx(ssd.bandwidth_bytes_per_s)


def test_effective_bandwidth_monotone_on_block_grid():
    for p in BUILTIN_PROFILES.values():
        curve = [effective_bandwidth(p, s) for s in (64, 128, 256, 512, 1024, 2048, 4096)]
        assert all(b >= a for a, b in zip(curve, curve[1:]))


def test_ssd_unaligned_payload_drops_throughput():
    ssd = BUILTIN_PROFILES["ssd"]
    assert effective_bandwidth(ssd, 5120) < effective_bandwidth(ssd, 4096)


def test_sequential_reads_skip_block_rounding():
    ssd = BUILTIN_PROFILES["ssd"]
    assert effective_bandwidth(ssd, 100, random=False) == pytest.approx(ssd.iops_cap * 100)


def test_mixed_workload_ssd_monotone_and_dominant():
    fractions = [0.1, 0.3, 0.5, 0.7, 0.9]
    slow = {}
    for name, p in BUILTIN_PROFILES.items():
        base = mixed_workload_throughput(p, 0.0)
        slow[name] = [1 - mixed_workload_throughput(p, f) / base for f in fractions]
    ssd = slow["ssd"]
    assert all(b >= a for a, b in zip(ssd, ssd[1:]))
    for name in ("rdma", "cxl", "nvm"):
        assert slow[name][2] < ssd[2]  # f = 0.5
    assert slow["cxl"][2] < 0.15


def test_rdma_mix_loss_caps_near_half():
    p = BUILTIN_PROFILES["rdma"]
    base = mixed_workload_throughput(p, 0.0)
    worst = max(1 - mixed_workload_throughput(p, f) / base
                for f in np.arange(0.0, 0.91, 0.1))
    assert 0.40 <= worst <= 0.55


def test_profile_roundtrip(tmp_path):
    p = make_profile(128, bw=2e9, iops=5e5, lat=2e-6, ovh=1e-7)
    path = tmp_path / "dev.profile"
    save_profile(p, str(path))
    assert load_profile(str(path)) == p


def test_profile_builtin_lookup():
    assert load_profile("ssd") is BUILTIN_PROFILES["ssd"]


def test_profile_file_errors(tmp_path):
    bad = tmp_path / "bad.profile"
    bad.write_text("name=x\nblocks=64\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_profile(str(bad))
    missing = tmp_path / "missing.profile"
    missing.write_text("name=x\n")
    with pytest.raises(ValueError, match="missing keys"):
        load_profile(str(missing))


def test_profile_validation():
    with pytest.raises(ValueError):
        DeviceProfile("x", 0, 1, 1, 1)
    with pytest.raises(ValueError):
        DeviceProfile("x", 64, 1, 1, 1, -1)


@settings(deadline=None, max_examples=60)
@given(st.integers(1, 5000), st.integers(1, 5000),
       st.sampled_from([64, 256, 512, 4096]))
def test_charging_idempotence(len_a, len_b, block):
    """One read covering a range never charges more than two reads do."""
    p = make_profile(block)
    assert p.charged(len_a + len_b) <= p.charged(len_a) + p.charged(len_b)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 9), st.integers(1, 64))
def test_simulate_time_monotone_in_stats(ops, charged, depth):
    p = BUILTIN_PROFILES["rdma"]
    t = simulate_time(IoStats(ops, 0, charged, 0), p, depth)
    t_more_ops = simulate_time(IoStats(ops + 10, 0, charged, 0), p, depth)
    t_more_bytes = simulate_time(IoStats(ops, 0, charged + 4096, 0), p, depth)
    assert t_more_ops >= t and t_more_bytes >= t
