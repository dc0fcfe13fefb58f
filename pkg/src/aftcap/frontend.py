"""Audio ingestion: WAV decoding, log-mel spectrograms, SpecAugment, feature files.

The spectrogram path is log(mel_filterbank @ |STFT|^2 + floor) with a Hamming
window at 50% hop, HTK-style triangular mel filters from 0 Hz to Nyquist, and
a log floor of 1e-10.  The FFT is an iterative radix-2 transform vectorized
across frames, so window lengths must be powers of two (default 2048 at
44.1 kHz).

Feature matrices travel in "AFM1" files: magic ``AFM1``, two little-endian
u32 dims (rows, cols), then row-major little-endian float32 payload.  The
format is generic; it carries encoder outputs as well as raw spectrograms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-10


@dataclass
class LogMelSpectrogram:
    frames: np.ndarray  # (T, F) float64
    sample_rate: int
    hop: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bands(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# WAV


class WavError(ValueError):
    pass


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file to float64 samples in [-1, 1] plus sample rate.

    Accepts 16-bit integer and 32-bit float encodings, mono or stereo
    (stereo is averaged to mono).  16-bit scaling divides by 32768, so
    positive full scale is 32767/32768 and -32768 maps to exactly -1.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError("malformed RIFF: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavError(f"malformed RIFF: truncated {cid.decode('latin1').strip()} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise WavError("malformed RIFF: fmt chunk too small")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise WavError("malformed RIFF: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise WavError(f"unsupported channel count {channels}")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported codec: format {audio_format}, {bits}-bit")
    if channels == 2:
        if samples.size % 2:
            raise WavError("malformed RIFF: odd sample count for stereo data")
        samples = samples.reshape(-1, 2).mean(axis=1)
    return samples, sample_rate


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(body))
    with open(path, "wb") as fh:
        fh.write(hdr + body)


# ---------------------------------------------------------------------------
# FFT / STFT


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative Cooley-Tukey FFT over the last axis (length a power of two).

    Vectorized across all leading axes, which is what the STFT wants:
    one call transforms every frame at once.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError(f"fft length {n} is not a power of two")
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = x[..., rev]
    half = 1
    while half < n:
        step = half * 2
        tw = np.exp(-2j * np.pi * np.arange(half) / step)
        segs = out.reshape(*out.shape[:-1], n // step, step)
        even = segs[..., :half].copy()
        odd = segs[..., half:] * tw
        segs[..., :half] = even + odd
        segs[..., half:] = even - odd
        half = step
    return out


def stft(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Hamming-windowed short-time FFT; returns (T, win//2+1) complex bins.

    Frame count is 1 + floor((len - win)/hop); no padding or centering.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < win:
        raise ValueError(f"signal of {samples.size} samples is shorter than one {win}-sample window")
    n_frames = 1 + (samples.size - win) // hop
    window = np.hamming(win)
    offsets = np.arange(n_frames) * hop
    frames = samples[offsets[:, None] + np.arange(win)[None, :]] * window
    spec = fft_radix2(frames)
    return spec[:, : win // 2 + 1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, win: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, (n_mels, win//2+1), spanning 0 Hz..Nyquist."""
    n_bins = win // 2 + 1
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / win
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each mel band; handy for tone tests."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def logmel(samples: np.ndarray, sample_rate: int, n_mels: int = 64,
           win: int = 2048, hop: int | None = None) -> LogMelSpectrogram:
    """Log-mel spectrogram: log(filterbank @ power spectrum + floor)."""
    if hop is None:
        hop = win // 2
    spec = stft(samples, win, hop)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(n_mels, win, sample_rate)
    frames = np.log(power @ fb.T + LOG_FLOOR)
    return LogMelSpectrogram(frames=frames, sample_rate=sample_rate, hop=hop)


# ---------------------------------------------------------------------------
# SpecAugment


def spec_augment(x: LogMelSpectrogram, n_time_masks: int, n_freq_masks: int,
                 max_width: int, rng: np.random.Generator) -> LogMelSpectrogram:
    """Mask random time/frequency stripes with the spectrogram mean.

    Pure: the input is untouched.  Widths are drawn uniformly from
    [0, max_width]; zero-width draws are no-ops.
    """
    frames = x.frames.copy()
    t, f = frames.shape
    fill = frames.mean()
    for _ in range(n_time_masks):
        w = int(rng.integers(0, max_width + 1))
        if w == 0:
            continue
        w = min(w, t)
        t0 = int(rng.integers(0, t - w + 1))
        frames[t0:t0 + w, :] = fill
    for _ in range(n_freq_masks):
        w = int(rng.integers(0, max_width + 1))
        if w == 0:
            continue
        w = min(w, f)
        f0 = int(rng.integers(0, f - w + 1))
        frames[:, f0:f0 + w] = fill
    return LogMelSpectrogram(frames=frames, sample_rate=x.sample_rate, hop=x.hop)


# ---------------------------------------------------------------------------
# AFM1 feature files

_AFM_MAGIC = b"AFM1"


class FeatureFileError(ValueError):
    pass


def write_features(path, matrix: np.ndarray) -> None:
    """Store a 2-D feature matrix as AFM1 (float32 payload)."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FeatureFileError(f"feature matrix must be 2-D, got shape {m.shape}")
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise FeatureFileError("empty feature matrix")
    if rows >= 2 ** 32 or cols >= 2 ** 32:
        raise FeatureFileError("feature matrix dims overflow u32")
    with open(path, "wb") as fh:
        fh.write(_AFM_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(m.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Read an AFM1 file back as a float64 (rows, cols) matrix."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _AFM_MAGIC:
        raise FeatureFileError(f"bad magic: expected AFM1, got {raw[:4]!r}")
    if len(raw) < 12:
        raise FeatureFileError("truncated header")
    rows, cols = struct.unpack("<II", raw[4:12])
    if rows == 0 or cols == 0:
        raise FeatureFileError("empty feature matrix")
    need = rows * cols * 4
    if len(raw) - 12 < need:
        raise FeatureFileError(f"truncated payload: need {need} bytes, have {len(raw) - 12}")
    flat = np.frombuffer(raw[12:12 + need], dtype="<f4")
    return flat.astype(np.float64).reshape(rows, cols)
