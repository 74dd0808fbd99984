#!/usr/bin/env python3

# ipfsim
# This file is part of ipfsim.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>

"""
Period-concatenation synthesis driven by the IPF.

An amplitude envelope is scaled into an alpha series, the general IPF is run
with that time-varying alpha, and every step appends one waveform period of
duration T = (1/f0) * (g/g~) to each layer. Layer 1 uses g~ = g and sounds
at f0; layer L uses g~ = the state L-1 steps back. Each period is scaled in
amplitude by g~ and alpha.
"""

# =============================================================================
# Import modules
# =============================================================================
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import signal
from scipy.io import wavfile

from ipfsim import core

logger = logging.getLogger(__name__)


def DefaultSynthParameters():
    """Returns default rendering parameters.
    Output:
        parR: dict containing synthesis parameters
    """
    parR = {
        "f0": 165.0,  # reference pitch [Hz]
        "sample_rate": 44100,  # [Hz]
        "layers": 2,
        "peak": 0.9,  # full-scale fraction after normalisation
        "smoothing_s": 0.02,  # envelope low-pass time constant [s]
        "window_ms": 20.0,  # envelope RMS window [ms]
        "window_size": 2048,  # spectrogram FFT size [samples]
        "hop": 512,  # spectrogram hop [samples]
    }
    return parR


# =============================================================================
# Types
# =============================================================================
@dataclass(frozen=True, eq=False)
class AlphaSeries:
    values: np.ndarray
    alpha_min_used: float
    alpha_target: float

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class WaveformPeriod:
    """One period at the reference pitch f0, peak magnitude <= 1."""

    samples: np.ndarray
    source: str
    f0: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise core.ParameterError("a waveform period needs at least one sample")
        if np.max(np.abs(samples)) > 1.0 + 1e-12:
            raise core.ParameterError("waveform period exceeds unit peak magnitude")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True, eq=False)
class SynthScore:
    """Per-step records of a synthesis run.
    alpha: (N,) alpha per step
    g: (N,) system state after the step
    past: (N, depth) states before it, newest first (g-, g2-, ...)
    """

    alpha: np.ndarray
    g: np.ndarray
    past: np.ndarray
    layer_count: int
    f0: float
    sample_rate: int
    diverged: bool = False

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        g = np.asarray(self.g, dtype=float)
        past = np.asarray(self.past, dtype=float).reshape(g.size, -1)
        if alpha.shape != g.shape:
            raise core.ParameterError("alpha and g records differ in length")
        if not 1 <= int(self.layer_count) <= 1 + past.shape[1]:
            raise core.ParameterError(
                f"layer_count={self.layer_count} needs 1 <= layers <= {1 + past.shape[1]}"
            )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "past", past)
        object.__setattr__(self, "layer_count", int(self.layer_count))

    def __len__(self):
        return self.g.size

    @property
    def depth(self):
        return self.past.shape[1]

    @classmethod
    def from_states(cls, states, alpha, depth, f0=165.0, sample_rate=44100, layer_count=None):
        """Builds a score from a state sequence g_0..g_M; records start once
        `depth` past states are available."""
        states = np.asarray(states, dtype=float)
        depth = int(depth)
        if states.size <= depth:
            raise core.ParameterError(f"{states.size} states cannot fill a history of depth {depth}")
        n = states.size - depth
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy()
        g = states[depth:]
        past = np.column_stack([states[depth - k:states.size - k] for k in range(1, depth + 1)]) if depth else np.empty((n, 0))
        layers = 1 + depth if layer_count is None else layer_count
        return cls(alpha, g, past, layers, f0, sample_rate)


# =============================================================================
# Alpha series and score
# =============================================================================
def attack_plateau_envelope(n_steps, attack_fraction=0.3):
    """Synthetic envelope: raised-cosine rise from 0 over the first
    attack_fraction of the steps, then a plateau at 1."""
    if int(n_steps) < 2:
        raise core.ParameterError("an envelope needs at least two steps")
    if not 0 < attack_fraction < 1:
        raise core.ParameterError(f"attack_fraction must lie in (0, 1), got {attack_fraction}")
    x = np.clip(np.arange(int(n_steps)) / (attack_fraction * (int(n_steps) - 1)), 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * x)


def envelope_to_alpha(envelope, params, target_alpha, alpha_min_value=None):
    """Scales an envelope into an alpha series.
    Input:
        envelope: non-negative amplitudes, one per IPF step
        params: IpfParams, its betas and g0 define alpha_min
        target_alpha: alpha reached on the plateau (mean of the last quarter)
        alpha_min_value: precomputed lower bound, computed when None
    Output:
        AlphaSeries with min(values) = alpha_min and plateau = target_alpha
    """
    envelope = np.asarray(envelope, dtype=float)
    if envelope.size == 0:
        raise core.ParameterError("envelope is empty")
    if np.any(envelope < 0) or not np.all(np.isfinite(envelope)):
        raise core.ParameterError("envelope values must be finite and non-negative")
    if alpha_min_value is None:
        alpha_min_value = core.alpha_min(params.betas, params.g0, params.history)
    if target_alpha < alpha_min_value:
        raise core.ParameterError(
            f"target alpha {target_alpha:g} lies below alpha_min {alpha_min_value:g}"
        )
    low = envelope.min()
    plateau = envelope[-max(1, envelope.size // 4):].mean()
    if not plateau - low > 0:
        raise core.ScalingError("envelope is flat, minimum equals plateau")
    values = alpha_min_value + (envelope - low) * (target_alpha - alpha_min_value) / (plateau - low)
    return AlphaSeries(np.maximum(values, alpha_min_value), float(alpha_min_value), float(target_alpha))


def run_score(alphas, params, layers=None, f0=165.0, sample_rate=44100):
    """Iterates the general IPF with a time-varying alpha.
    Input:
        alphas: AlphaSeries or array of alpha per step
        params: IpfParams supplying betas and the seed g0
        layers: number of render layers, history depth is max(n_betas, layers-1, 1)
    Output:
        SynthScore; divergence truncates it and sets `diverged`. A state
        g <= 0 also ends the score.
    """
    values = np.asarray(getattr(alphas, "values", alphas), dtype=float)
    betas = params.betas
    layers = 1 + len(betas) if layers is None else int(layers)
    depth = max(len(betas), layers - 1, 1)
    if values.size <= depth:
        raise core.ParameterError(f"alpha series of length {values.size} is shorter than the seeding")
    if np.any(values <= 0):
        raise core.ParameterError("alpha series must be positive")

    # seeding: simple IPF steps driven by the first alpha values
    chain = [params.g0]
    for i in range(depth):
        g = core.step_simple(chain[-1], values[i])
        if not (np.isfinite(g) and g > 0):
            raise core.ScoreError(f"IPF diverged while seeding the history at step {i}")
        chain.append(g)
    current = chain[-1]
    past = chain[-2::-1]

    records_alpha, records_g, records_past = [], [], []
    diverged = False
    for i in range(depth, values.size):
        step = core.IpfParams(values[i], betas)
        g = core.step_general(core.StateHistory(current, past[:len(betas)]), step)
        if isinstance(g, core.DivergenceSignal) or not 0 < g <= core.DIVERGENCE_CAP:
            if not records_g:
                raise core.ScoreError(f"IPF diverged at the first score step (alpha={values[i]:g})")
            logger.warning("score truncated: IPF diverged at step %d of %d", i - depth, values.size - depth)
            diverged = True
            break
        past = [current] + past[:-1]
        current = g
        records_alpha.append(values[i])
        records_g.append(g)
        records_past.append(past)
    return SynthScore(
        np.array(records_alpha), np.array(records_g), np.array(records_past),
        layers, f0, sample_rate, diverged,
    )


# =============================================================================
# Rendering
# =============================================================================
def layer_gains(score, layer):
    """g~ per step for a layer: g for layer 1, the state layer-1 steps back
    otherwise."""
    if not 1 <= layer <= 1 + score.depth:
        raise core.ParameterError(f"layer {layer} needs 1 <= layer <= {1 + score.depth}")
    return score.g if layer == 1 else score.past[:, layer - 2]


def layer_durations(score, layer):
    """Period durations T = (1/f0) * (g/g~) in seconds."""
    gains = layer_gains(score, layer)
    bad = ~np.isfinite(gains) | ~(gains > 0) | ~np.isfinite(score.g) | ~(score.g > 0)
    if np.any(bad):
        step = int(np.flatnonzero(bad)[0])
        raise core.RenderError(
            f"layer {layer}: cannot render state g={score.g[step]:g}, g~={gains[step]:g} at step {step}"
        )
    return (1.0 / score.f0) * (score.g / gains)


def _resample(samples, n):
    """Linear interpolation of one period, wrapping around, to n samples."""
    size = samples.size
    x = np.arange(n) * (size / n)
    return np.interp(x, np.arange(size + 1), np.append(samples, samples[0]))


def render_layers(score, period, layers=None):
    """Per-layer concatenated streams before mixing and normalisation.
    Period sample counts carry the rounding error forward so the length of
    each stream is round(sum(T) * sample_rate)."""
    layers = score.layer_count if layers is None else int(layers)
    if layers < 1:
        raise core.ParameterError("at least one layer is needed")
    if score.sample_rate < 8000:
        raise core.ParameterError(f"sample rate must be >= 8000 Hz, got {score.sample_rate}")
    streams = []
    for layer in range(1, layers + 1):
        durations = layer_durations(score, layer)
        gains = layer_gains(score, layer)
        edges = np.rint(np.cumsum(durations * score.sample_rate)).astype(int)
        counts = np.diff(edges, prepend=0)
        pieces = [
            _resample(period.samples, n) * (gain * alpha)
            for n, gain, alpha in zip(counts, gains, score.alpha)
            if n > 0
        ]
        streams.append(np.concatenate(pieces) if pieces else np.zeros(0))
    return streams


def render(score, period, layers=None, peak=0.9):
    """Renders a score to a mono buffer: layer streams are summed with equal
    weight and the sum is normalised to `peak` full scale."""
    streams = render_layers(score, period, layers)
    audio = np.zeros(max(s.size for s in streams))
    for stream in streams:
        audio[:stream.size] += stream
    top = np.max(np.abs(audio)) if audio.size else 0.0
    if top > 0:
        audio *= peak / top
    logger.info("rendered %d samples (%.2f s) from %d steps", audio.size, audio.size / score.sample_rate, len(score))
    return audio


# =============================================================================
# Waveform periods and audio files
# =============================================================================
def gaussian_period(f0=165.0, sample_rate=44100):
    """One period with a centred Gaussian pulse, sigma = T/10, mean removed
    and normalised to unit peak."""
    n = int(round(sample_rate / f0))
    if n < 2:
        raise core.ParameterError("f0 too high for the sample rate")
    t = np.arange(n) / sample_rate
    period_s = n / sample_rate
    pulse = np.exp(-0.5 * ((t - period_s / 2) / (period_s / 10)) ** 2)
    pulse -= pulse.mean()
    return WaveformPeriod(pulse / np.max(np.abs(pulse)), "gaussian", float(f0))


def estimate_f0(audio, sample_rate, fmin=50.0, fmax=2000.0):
    """Pitch of the strongest spectral peak within [fmin, fmax]."""
    audio = np.asarray(audio, dtype=float)
    spectrum = np.abs(np.fft.rfft(audio * np.blackman(audio.size)))
    freqs = np.fft.rfftfreq(audio.size, 1.0 / sample_rate)
    band = (freqs >= fmin) & (freqs <= fmax)
    if not band.any() or not np.any(spectrum[band] > 0):
        raise core.ParameterError("no pitch found in the recording")
    return float(freqs[band][np.argmax(spectrum[band])])


def sampled_period(audio, sample_rate, f0=None):
    """Cuts one period from the middle of a recording, starting at a rising
    zero crossing."""
    audio = np.asarray(audio, dtype=float)
    if f0 is None:
        f0 = estimate_f0(audio, sample_rate)
    n = int(round(sample_rate / f0))
    if audio.size < 4 * n:
        raise core.ParameterError("recording is shorter than four periods")
    middle = audio[audio.size // 2 - n:audio.size // 2 + 2 * n]
    rising = np.flatnonzero((middle[:-1] < 0) & (middle[1:] >= 0))
    start = int(rising[0]) + 1 if rising.size and rising[0] + 1 + n <= middle.size else 0
    cut = middle[start:start + n]
    top = np.max(np.abs(cut))
    if not top > 0:
        raise core.ParameterError("recording is silent")
    return WaveformPeriod(cut / top, "sampled", float(f0))


def read_wav(path):
    """Reads a WAV file as mono floats in [-1, 1].
    Output:
        audio, sample_rate
    """
    try:
        sample_rate, data = wavfile.read(path)
    except ValueError as error:
        raise core.ParameterError(f"{path}: not a readable WAV file ({error})") from None
    if data.dtype == np.uint8:
        audio = (data.astype(float) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        audio = data.astype(float) / float(-np.iinfo(data.dtype).min)
    else:
        audio = data.astype(float)
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    return audio, int(sample_rate)


def write_wav(path, audio, sample_rate):
    """Writes 16-bit PCM mono."""
    pcm = np.round(np.clip(np.asarray(audio, dtype=float), -1.0, 1.0) * 32767).astype(np.int16)
    wavfile.write(path, int(sample_rate), pcm)


# =============================================================================
# Analysis
# =============================================================================
@dataclass(frozen=True, eq=False)
class Spectrogram:
    times: np.ndarray  # frame centres [s]
    freqs: np.ndarray  # [Hz]
    magnitude: np.ndarray  # (frames, bins)

    def to_frame(self):
        t, f = np.meshgrid(self.times, self.freqs, indexing="ij")
        return pd.DataFrame.from_dict(
            {"time_s": t.ravel(), "freq_hz": f.ravel(), "magnitude": self.magnitude.ravel()}
        )


def spectrogram(audio, sample_rate, window_size=2048, hop=512):
    """Short-time magnitude spectrum with a Hann window.
    Input:
        audio: mono samples
        window_size: FFT size, a power of two >= 64
        hop: frame advance in samples
    Output:
        Spectrogram
    """
    audio = np.asarray(audio, dtype=float)
    window_size, hop = int(window_size), int(hop)
    if window_size < 64 or window_size & (window_size - 1):
        raise core.ParameterError(f"window size must be a power of two >= 64, got {window_size}")
    if hop < 1:
        raise core.ParameterError(f"hop must be >= 1, got {hop}")
    if audio.size < window_size:
        raise core.ParameterError(f"audio of {audio.size} samples is shorter than one window")
    frames = np.lib.stride_tricks.sliding_window_view(audio, window_size)[::hop]
    magnitude = np.abs(np.fft.rfft(frames * np.hanning(window_size), axis=1))
    times = (np.arange(frames.shape[0]) * hop + window_size / 2) / sample_rate
    freqs = np.fft.rfftfreq(window_size, 1.0 / sample_rate)
    return Spectrogram(times, freqs, magnitude)


def extract_envelope(audio, sample_rate, window_ms=20.0, smoothing_s=0.02):
    """RMS per non-overlapping window, smoothed by a single-pole low-pass
    with time constant smoothing_s. The filter starts settled on the first
    frame."""
    if not window_ms > 0:
        raise core.ParameterError(f"window_ms must be positive, got {window_ms}")
    audio = np.asarray(audio, dtype=float)
    if audio.size == 0:
        return np.zeros(0)
    window = max(1, int(round(sample_rate * window_ms / 1000.0)))
    n_frames = max(1, audio.size // window)
    frames = audio[:n_frames * window].reshape(n_frames, -1) if audio.size >= window else audio[np.newaxis]
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    a = np.exp(-(window / sample_rate) / smoothing_s)
    smoothed, _ = signal.lfilter([1.0 - a], [1.0, -a], rms, zi=[a * rms[0]])
    return smoothed


def resample_envelope(envelope, n_steps):
    """Linear interpolation of an envelope onto n_steps IPF steps."""
    envelope = np.asarray(envelope, dtype=float)
    if envelope.size == 0:
        raise core.ParameterError("envelope is empty")
    return np.interp(np.linspace(0, envelope.size - 1, int(n_steps)), np.arange(envelope.size), envelope)


# =============================================================================
# File output
# =============================================================================
def score_frame(score, layers=None):
    """Table `step,alpha,g,g_minus,g_2minus,...,period_s_layer1..N`."""
    layers = score.layer_count if layers is None else int(layers)
    data = {"step": np.arange(len(score)), "alpha": score.alpha, "g": score.g}
    for k in range(score.depth):
        data["g_minus" if k == 0 else f"g_{k + 1}minus"] = score.past[:, k]
    for layer in range(1, layers + 1):
        data[f"period_s_layer{layer}"] = layer_durations(score, layer)
    return pd.DataFrame.from_dict(data)


def write_score_csv(score, path, layers=None):
    score_frame(score, layers).to_csv(path, index=False, float_format="%.12g")


def write_spectrogram_csv(spec, path):
    spec.to_frame().to_csv(path, index=False, float_format="%.6g")
