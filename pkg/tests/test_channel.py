import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nms_dia_osd.channel import (ChannelParams, ebn0_to_sigma, frame_rng, hard_decision, llr, random_frame,
                                 transmit)
from nms_dia_osd.gf2 import derive_generator, syndrome


@pytest.mark.parametrize("ebn0, rate, sigma", [(0.0, 0.5, 1.0), (3.0, 0.5, 0.70795), (2.7, 0.5, 0.73282)])
def test_ebn0_to_sigma(ebn0, rate, sigma):
    assert ebn0_to_sigma(ebn0, rate) == pytest.approx(sigma, abs=5e-6)


@pytest.mark.parametrize("rate", [0.0, -0.5, 1.5])
def test_ebn0_to_sigma_rejects_rate(rate):
    with pytest.raises(ValueError):
        ebn0_to_sigma(1.0, rate)


def test_noiseless_all_zero():
    y = transmit(np.zeros(10, dtype=np.uint8), ChannelParams(3.0, 0.5, noiseless=True), frame_rng(0, 0))
    assert np.array_equal(y, np.ones(10))


def test_fixed_seed_is_bit_identical():
    p = ChannelParams(2.0, 0.5)
    a = transmit(np.zeros(64, dtype=np.uint8), p, frame_rng(5, 1, 2))
    b = transmit(np.zeros(64, dtype=np.uint8), p, frame_rng(5, 1, 2))
    assert np.array_equal(a, b)
    c = transmit(np.zeros(64, dtype=np.uint8), p, frame_rng(5, 1, 3))
    assert not np.array_equal(a, c)


def test_noise_variance():
    p = ChannelParams(0.0, 0.5)
    y = transmit(np.zeros(100_000, dtype=np.uint8), p, frame_rng(11))
    assert np.var(y - 1.0) == pytest.approx(1.0, abs=0.02)


def test_random_frame_is_codeword(ccsds):
    g, _ = derive_generator(ccsds)
    fr = random_frame(g, ChannelParams(3.0, ccsds.rate), frame_rng(1, 2))
    assert not syndrome(ccsds, fr.codeword).any()
    assert np.array_equal(fr.codeword, fr.message.astype(int) @ g % 2)


@pytest.mark.parametrize("y, sigma, out", [(1.0, 1.0, 2.0), (-0.5, 0.5, -4.0)])
def test_llr_examples(y, sigma, out):
    assert llr(np.array([y]), sigma)[0] == pytest.approx(out)


def test_llr_rejects_sigma():
    with pytest.raises(ValueError):
        llr(np.ones(3), 0.0)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30), st.floats(0.1, 3))
def test_llr_preserves_hard_decisions(y, sigma):
    y = np.array(y)
    assert np.array_equal(hard_decision(llr(y, sigma)), hard_decision(y))
