"""BPSK over AWGN with per-frame reproducible noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def ebn0_to_sigma(ebn0_db, rate):
    """Noise standard deviation for unit-energy BPSK at the given Eb/N0."""
    if rate <= 0 or rate > 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return 1.0 / np.sqrt(2.0 * rate * 10.0 ** (ebn0_db / 10.0))


@dataclass(frozen=True)
class ChannelParams:
    ebn0_db: float
    rate: float
    seed: int = 0
    noiseless: bool = False

    @property
    def sigma(self):
        return ebn0_to_sigma(self.ebn0_db, self.rate)


@dataclass(frozen=True, eq=False)
class Frame:
    message: np.ndarray
    codeword: np.ndarray
    received: np.ndarray


def frame_rng(seed, *keys):
    """Independent generator for one frame, keyed by ``(seed, *keys)``.

    Derived by hashing, so frame ``i`` sees the same stream no matter how
    frames are split across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def transmit(codeword, params, rng):
    """Map bits to ``1 - 2c`` and add N(0, sigma^2) noise drawn from ``rng``."""
    codeword = np.asarray(codeword, dtype=np.uint8)
    symbols = 1.0 - 2.0 * codeword
    if params.noiseless:
        return symbols
    return symbols + params.sigma * rng.standard_normal(codeword.shape)


def random_frame(generator, params, rng):
    """Draw a message, encode it with ``generator`` and send it."""
    k = generator.shape[0]
    msg = rng.integers(0, 2, size=k, dtype=np.uint8)
    cw = (msg.astype(np.int64) @ generator % 2).astype(np.uint8)
    return Frame(message=msg, codeword=cw, received=transmit(cw, params, rng))


def llr(received, sigma):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 2.0 * np.asarray(received, dtype=np.float64) / sigma**2


def hard_decision(x):
    return (np.asarray(x) < 0).astype(np.uint8)
