import numpy as np
import pytest

from edgesim.stochsyn import LFSR_PERIOD, DropMask, Lfsr, drop_mask, lfsr_next, masked_weights

TAPS = (0, 2, 3, 5)  # x^16 + x^14 + x^13 + x^11 + 1, shift-right form


def reference_step(state):
    """Independent step-by-step LFSR used as the oracle for the fast path."""
    bit = state & 1
    fb = 0
    for t in TAPS:
        fb ^= (state >> t) & 1
    return bit, ((state >> 1) | (fb << 15)) & 0xFFFF


def test_output_bit_is_bit0():
    bit, _ = lfsr_next(Lfsr(0x0001))
    assert bit == 1
    bit, _ = lfsr_next(Lfsr(0xFFFE))
    assert bit == 0


def test_zero_state_rejected():
    with pytest.raises(ValueError):
        Lfsr(0)


def test_step_matches_reference():
    state = 0xACE1
    lfsr = Lfsr(state)
    for _ in range(1000):
        ref_bit, state = reference_step(state)
        bit, lfsr = lfsr_next(lfsr)
        assert bit == ref_bit
        assert lfsr.state == state


def test_full_period_returns_to_seed():
    # exhaustive cycle enumeration: exactly 65535 distinct states
    seen = set()
    lfsr = Lfsr(0xACE1)
    for _ in range(LFSR_PERIOD):
        assert lfsr.state not in seen
        seen.add(lfsr.state)
        _, lfsr = lfsr.step()
    assert lfsr.state == 0xACE1
    assert len(seen) == LFSR_PERIOD
    assert 0 not in seen


def test_bits_fast_path_matches_stepping():
    lfsr = Lfsr(0xBEEF)
    fast, after = lfsr.bits(3000)
    slow = []
    cur = lfsr
    for _ in range(3000):
        b, cur = cur.step()
        slow.append(b)
    assert list(fast) == slow
    assert after.state == cur.state


def test_drop_mask_reference_evaluation():
    # oracle: evaluate the mask definition with the naive stepper
    state = 0xACE1
    expect = np.zeros((4, 4), dtype=bool)
    for i in range(4):
        for j in range(4):
            word = 0
            for _ in range(16):
                bit, state = reference_step(state)
                word = (word << 1) | bit
            expect[i, j] = (word / 65536.0) >= 0.25
    mask, after = drop_mask((4, 4), 0.25, Lfsr(0xACE1))
    assert np.array_equal(mask.keep, expect)
    assert after.state == state
    # identical across runs
    mask2, _ = drop_mask((4, 4), 0.25, Lfsr(0xACE1))
    assert np.array_equal(mask.keep, mask2.keep)


def test_drop_mask_p_zero_keeps_all():
    mask, _ = drop_mask((8, 8), 0.0, Lfsr(0xACE1))
    assert mask.keep.all()
    assert mask.drop_count() == 0


def test_drop_mask_rate_single_large_mask():
    mask, _ = drop_mask((100, 100), 0.25, Lfsr(0xACE1))
    rate = mask.drop_count() / 10000
    assert 0.20 <= rate <= 0.30


@pytest.mark.parametrize("p", [0.1, 0.25, 0.5])
def test_mean_drop_rate_over_many_masks(p):
    lfsr = Lfsr(0x1234)
    dropped = 0
    for _ in range(10_000):
        mask, lfsr = drop_mask((8, 8), p, lfsr)
        dropped += mask.drop_count()
    rate = dropped / (10_000 * 64)
    assert abs(rate - p) <= 0.02


def test_drop_mask_rejects_bad_p():
    with pytest.raises(ValueError):
        drop_mask((2, 2), 1.0, Lfsr(1))
    with pytest.raises(ValueError):
        drop_mask((2, 2), -0.1, Lfsr(1))


def test_masked_weights_identity_and_zero():
    w = np.arange(12).reshape(3, 4)
    keep_all = DropMask(keep=np.ones((3, 4), dtype=bool), p=0.0)
    assert np.array_equal(masked_weights(w, keep_all), w)
    drop_all = DropMask(keep=np.zeros((3, 4), dtype=bool), p=0.99)
    assert not masked_weights(w, drop_all).any()


def test_masked_weights_single_entry():
    w = np.ones((2, 2))
    keep = np.ones((2, 2), dtype=bool)
    keep[0, 0] = False
    out = masked_weights(w, DropMask(keep=keep, p=0.25))
    assert out[0, 0] == 0
    assert out.sum() == 3


def test_masked_weights_shape_mismatch():
    with pytest.raises(ValueError):
        masked_weights(np.ones((2, 3)), DropMask(keep=np.ones((3, 2), dtype=bool), p=0.1))
