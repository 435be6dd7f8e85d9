import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmimo.ofdm import FrameCube, TonePlan, build_tone_plan, dft, freq_to_taps, idft, reorient, taps_to_freq

from oracles import dft_matrix, naive_taps_to_freq


def test_ht40_plan_at_128():
    plan = build_tone_plan(128)
    assert (plan.data.size, plan.pilot.size, plan.guard.size) == (108, 6, 14)
    k = np.arange(128) - 64
    np.testing.assert_array_equal(np.sort(k[plan.pilot]), [-53, -25, -11, 11, 25, 53])
    guard = k[plan.guard]
    assert set(guard) == set(range(-64, -58)) | set(range(59, 64)) | {-1, 0, 1}


@pytest.mark.parametrize("w", [8, 16, 32, 64, 256])
def test_scaled_plans_partition(w):
    plan = build_tone_plan(w)
    assert plan.data.size + plan.pilot.size + plan.guard.size == w
    assert plan.data.size > 0 and plan.pilot.size > 0
    # DC is always a guard tone
    assert plan.mask("guard")[w // 2]
    # pilots come in +-k pairs
    k = plan.pilot - w // 2
    assert set(k) == set(-k)
    np.testing.assert_array_equal(plan.used, np.sort(np.r_[plan.data, plan.pilot]))


def test_plan_validation():
    with pytest.raises(ValueError):
        build_tone_plan(4)
    with pytest.raises(ValueError):
        TonePlan(4, np.array([0, 1]), np.array([1]), np.array([3]))


@pytest.mark.parametrize("w", [8, 16, 128])
def test_dft_matches_dense_matrix(w, rng):
    x = rng.normal(size=(3, w)) + 1j * rng.normal(size=(3, w))
    np.testing.assert_allclose(dft(x), x @ dft_matrix(w).T, atol=1e-12)
    np.testing.assert_allclose(idft(x), x @ dft_matrix(w).conj(), atol=1e-12)


def test_dft_along_other_axis(rng):
    x = rng.normal(size=(16, 5)) + 0j
    np.testing.assert_allclose(dft(x, axis=0), dft_matrix(16) @ x, atol=1e-12)


def test_taps_to_freq_matches_loops(rng):
    taps = np.zeros((2, 3, 16), dtype=complex)
    taps[:, :, :4] = rng.normal(size=(2, 3, 4)) + 1j * rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(taps_to_freq(taps), naive_taps_to_freq(taps), atol=1e-12)
    np.testing.assert_allclose(freq_to_taps(taps_to_freq(taps)), taps, atol=1e-12)


def test_single_tap_is_flat():
    e1 = np.zeros(32)
    e1[0] = 1.0
    np.testing.assert_allclose(dft(e1), np.full(32, 1 / np.sqrt(32)), atol=1e-15)
    # a DC-centred tone lands in bin W/2
    np.testing.assert_allclose(np.abs(dft(np.ones(32)))[16], np.sqrt(32))


@settings(max_examples=30, deadline=None)
@given(w=st.sampled_from([8, 16, 64]), seed=st.integers(0, 2**32 - 1), a=st.complex_numbers(max_magnitude=10))
def test_dft_unitary_and_linear(w, seed, a):
    r = np.random.default_rng(seed)
    x = r.normal(size=w) + 1j * r.normal(size=w)
    y = r.normal(size=w) + 1j * r.normal(size=w)
    assert np.linalg.norm(dft(x)) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    np.testing.assert_allclose(idft(dft(x)), x, atol=1e-12)
    np.testing.assert_allclose(dft(a * x + y), a * dft(x) + dft(y), atol=1e-9 * (1 + abs(a)))


def test_reorient(rng):
    v = rng.normal(size=(16, 4, 3))
    cube = FrameCube(v)
    other = reorient(cube)
    assert other.orientation == "per-antenna"
    assert other.values.shape == (4, 16, 3)
    for w, b, t in [(0, 0, 0), (5, 3, 2), (15, 1, 1)]:
        assert other.values[b, w, t] == v[w, b, t]
    back = reorient(other)
    assert back.orientation == "per-frequency"
    np.testing.assert_array_equal(back.values, v)
    assert cube.t_total == 3


def test_frame_cube_validation():
    with pytest.raises(ValueError):
        FrameCube(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        FrameCube(np.zeros((2, 2, 2)), "sideways")


def test_support_projection_is_idempotent(rng):
    """Truncating taps to P entries is a projection in the frequency domain."""
    w, p = 32, 5

    def project(freq):
        taps = freq_to_taps(freq)
        taps[..., p:] = 0
        return taps_to_freq(taps)

    f = rng.normal(size=w) + 1j * rng.normal(size=w)
    once = project(f)
    np.testing.assert_allclose(project(once), once, atol=1e-12)
    # orthogonal: the residual is orthogonal to the range
    assert abs(np.vdot(f - once, once)) < 1e-10


def test_small_plan_contract():
    plan = build_tone_plan(8)
    assert plan.guard.size >= 1 and plan.data.size >= 4


def test_tiny_cube_and_exhaustive_index_check(rng):
    one = FrameCube(np.array([[[2.0 + 1j]]]))
    np.testing.assert_array_equal(reorient(one).values, one.values)
    v = rng.normal(size=(4, 3, 2))
    x = reorient(FrameCube(v)).values
    for w in range(4):
        for b in range(3):
            for t in range(2):
                assert v[w, b, t] == x[b, w, t]


def test_single_tap_channel_is_flat(rng):
    a = 0.7 - 1.1j
    taps = np.zeros((1, 1, 16), dtype=complex)
    taps[0, 0, 0] = a
    np.testing.assert_allclose(np.abs(taps_to_freq(taps)), abs(a) / 4, atol=1e-15)


def test_taps_to_freq_linearity(rng):
    x = rng.normal(size=(2, 2, 16)) + 1j * rng.normal(size=(2, 2, 16))
    y = rng.normal(size=(2, 2, 16)) + 1j * rng.normal(size=(2, 2, 16))
    a, b = 0.3 - 2j, -1.7
    np.testing.assert_allclose(taps_to_freq(a * x + b * y), a * taps_to_freq(x) + b * taps_to_freq(y), atol=1e-10)
