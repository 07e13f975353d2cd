"""Baseband coexistence environment: one BPSK network, one inverting interferer, AWGN.

The band is split into ``num_channels`` equal subbands centred at
``(c + 0.5) / num_channels - 0.5`` cycles/sample. With rectangular pulses of
``samples_per_symbol`` samples, tones on distinct subbands are exactly
orthogonal over each symbol, so a same-channel collision is the only
source of bit errors apart from noise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._rng import substream


class Scenario(str, enum.Enum):
    STATIC = "static"
    HOPPING = "hopping"


@dataclass(frozen=True)
class EnvConfig:
    num_channels: int = 4
    samples_per_step: int = 1024
    samples_per_symbol: int = 4
    wn_amplitude: float = 1.0
    interferer_amplitude_ratio: float = 2.0
    snr_db: float = 10.0
    scenario: Scenario = Scenario.STATIC
    steps_per_episode: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.num_channels < 1:
            raise ValueError("num_channels must be >= 1")
        if self.samples_per_symbol < 1 or self.samples_per_step % self.samples_per_symbol:
            raise ValueError(
                f"samples_per_step={self.samples_per_step} is not a multiple of "
                f"samples_per_symbol={self.samples_per_symbol}"
            )
        if self.interferer_amplitude_ratio <= 1.0:
            raise ValueError("interferer_amplitude_ratio must exceed 1 to flip colliding bits")
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be >= 1")

    @property
    def symbols_per_step(self) -> int:
        return self.samples_per_step // self.samples_per_symbol

    @property
    def noise_variance(self) -> float:
        """Complex per-sample noise variance giving ``snr_db`` symbol SNR after matched filtering."""
        symbol_energy = self.wn_amplitude**2 * self.samples_per_symbol
        return symbol_energy / 10.0 ** (self.snr_db / 10.0)


class StepOutcome(NamedTuple):
    reward: float
    next_observation: np.ndarray
    terminal: bool
    # hidden state exposed for evaluation only; agents must not read it
    interferer_channel: int


def channel_center(channel: int, num_channels: int = 4) -> float:
    """Normalized centre frequency of ``channel`` in cycles/sample."""
    return (channel + 0.5) / num_channels - 0.5


def _check_channel(channel, num_channels):
    if not 0 <= int(channel) < num_channels or int(channel) != channel:
        raise ValueError(f"channel {channel!r} outside [0, {num_channels - 1}]")
    return int(channel)


def modulate_bpsk(bits, amplitude: float = 1.0) -> np.ndarray:
    """Antipodal mapping: bit 0 -> +amplitude, bit 1 -> -amplitude."""
    bits = np.asarray(bits, dtype=np.int64)
    return amplitude * (1.0 - 2.0 * bits)


def upconvert(symbols, channel: int, sps: int = 4, num_channels: int = 4,
              samples_per_step: int | None = None) -> np.ndarray:
    """Rectangular-pulse shape ``symbols`` and shift them onto ``channel``'s subband."""
    channel = _check_channel(channel, num_channels)
    symbols = np.asarray(symbols, dtype=float)
    n_samples = symbols.size * sps
    if samples_per_step is not None and n_samples != samples_per_step:
        raise ValueError(
            f"{symbols.size} symbols x {sps} samples/symbol != {samples_per_step} samples"
        )
    n = np.arange(n_samples)
    carrier = np.exp(2j * np.pi * channel_center(channel, num_channels) * n)
    return np.repeat(symbols, sps) * carrier


def interferer_next_channel(scenario, current: int, at_reset: bool, rng,
                            num_channels: int = 4) -> int:
    if at_reset:
        return int(rng.integers(num_channels))
    if Scenario(scenario) is Scenario.HOPPING:
        return (int(current) + 1) % num_channels
    return int(current)


def synthesize_step_frame(config: EnvConfig, interferer_channel: int, wn_channel: int | None,
                          bits, noise_rng) -> np.ndarray:
    """Sum of the network signal, the inverted interferer replica, and AWGN.

    ``wn_channel=None`` produces an interferer-only frame. ``noise_rng=None``
    disables noise.
    """
    bits = np.asarray(bits)
    if bits.size != config.symbols_per_step:
        raise ValueError(f"expected {config.symbols_per_step} bits, got {bits.size}")
    a = config.wn_amplitude
    kw = dict(sps=config.samples_per_symbol, num_channels=config.num_channels,
              samples_per_step=config.samples_per_step)
    frame = upconvert(
        modulate_bpsk(bits, -config.interferer_amplitude_ratio * a), interferer_channel, **kw
    )
    if wn_channel is not None:
        frame = frame + upconvert(modulate_bpsk(bits, a), wn_channel, **kw)
    if noise_rng is not None:
        scale = np.sqrt(config.noise_variance / 2.0)
        noise = noise_rng.standard_normal((2, config.samples_per_step)) * scale
        frame = frame + (noise[0] + 1j * noise[1])
    return frame


def matched_filter_demodulate(frame, channel: int, sps: int = 4,
                              num_channels: int = 4) -> np.ndarray:
    """Correlate each symbol period with the channel carrier; sign decision on the real part."""
    channel = _check_channel(channel, num_channels)
    frame = np.asarray(frame, dtype=complex)
    if frame.size % sps:
        raise ValueError(f"frame length {frame.size} not a multiple of {sps}")
    n = np.arange(frame.size)
    baseband = frame * np.exp(-2j * np.pi * channel_center(channel, num_channels) * n)
    z = baseband.reshape(-1, sps).sum(axis=1)
    return (z.real < 0).astype(np.int64)


def bit_error_rate(tx, rx) -> float:
    tx = np.asarray(tx)
    rx = np.asarray(rx)
    if tx.shape != rx.shape:
        raise ValueError(f"length mismatch: {tx.shape} vs {rx.shape}")
    if tx.size == 0:
        raise ValueError("empty bit sequences")
    return float(np.count_nonzero(tx != rx)) / tx.size


def reward_from_ber(ber: float) -> float:
    if not 0.0 <= ber <= 1.0:
        raise ValueError(f"BER {ber} outside [0, 1]")
    return 1.0 - ber


def fft_magnitude(frame) -> np.ndarray:
    """|DFT(frame)| scaled by 1/N so the inputs of the Q-network stay O(1)."""
    frame = np.asarray(frame, dtype=complex)
    return np.abs(np.fft.fft(frame)) / frame.size


def subband_energies(observation, num_channels: int = 4) -> np.ndarray:
    """Spectral energy per channel subband of an FFT-magnitude observation."""
    mags = np.asarray(observation, dtype=float)
    freqs = np.fft.fftfreq(mags.size)
    band = np.floor((freqs + 0.5) * num_channels).astype(np.int64)
    return np.bincount(band, weights=mags**2, minlength=num_channels)


class CoexistenceEnv:
    """Episodic environment with a gym-like ``reset``/``step`` pair.

    Each step the allocated channel carries 256 random payload bits; the
    reward is ``1 - BER`` measured on that channel, and the next observation
    is the FFT magnitude of the received band.
    """

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        seed = self.config.seed
        self._noise_rng = substream(seed, "noise")
        self._interferer_rng = substream(seed, "interferer")
        self._payload_rng = substream(seed, "payload")
        self.interferer_channel = 0
        self.step_in_episode = 0
        self.episode_index = 0
        self._active = False

    @property
    def n_actions(self) -> int:
        return self.config.num_channels

    @property
    def observation_size(self) -> int:
        return self.config.samples_per_step

    def _draw_bits(self):
        return self._payload_rng.integers(0, 2, self.config.symbols_per_step)

    def reset(self) -> np.ndarray:
        cfg = self.config
        self.interferer_channel = interferer_next_channel(
            cfg.scenario, self.interferer_channel, True, self._interferer_rng, cfg.num_channels
        )
        self.step_in_episode = 0
        self.episode_index += 1
        self._active = True
        frame = synthesize_step_frame(
            cfg, self.interferer_channel, None, self._draw_bits(), self._noise_rng
        )
        return fft_magnitude(frame)

    def step(self, action: int) -> StepOutcome:
        cfg = self.config
        if not self._active:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        action = _check_channel(action, cfg.num_channels)
        bits = self._draw_bits()
        active_interferer = self.interferer_channel
        frame = synthesize_step_frame(cfg, active_interferer, action, bits, self._noise_rng)
        rx = matched_filter_demodulate(frame, action, cfg.samples_per_symbol, cfg.num_channels)
        reward = reward_from_ber(bit_error_rate(bits, rx))
        self.interferer_channel = interferer_next_channel(
            cfg.scenario, active_interferer, False, self._interferer_rng, cfg.num_channels
        )
        self.step_in_episode += 1
        terminal = self.step_in_episode == cfg.steps_per_episode
        if terminal:
            self._active = False
        return StepOutcome(reward, fft_magnitude(frame), terminal, active_interferer)
