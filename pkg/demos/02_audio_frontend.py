"""Log-mel extraction from a synthesized tone, plus the feature-file format.

Writes a WAV with a sine sweep across two mel band centers, extracts the
spectrogram, and shows the band argmax following the tone.
"""

import tempfile
from pathlib import Path

import numpy as np

from aftcap.frontend import (
    fft_radix2, logmel, mel_band_centers, read_features, read_wav, write_features, write_wav,
)

rate, win = 44100, 2048
centers = mel_band_centers(64, rate)
lo_band, hi_band = 24, 44
print(f"mel band {lo_band} center {centers[lo_band]:.0f} Hz, band {hi_band} center {centers[hi_band]:.0f} Hz")

t = np.arange(rate) / rate
tone = np.where(t < 0.5,
                0.6 * np.sin(2 * np.pi * centers[lo_band] * t),
                0.6 * np.sin(2 * np.pi * centers[hi_band] * t))

with tempfile.TemporaryDirectory() as tmp:
    wav_path = Path(tmp) / "sweep.wav"
    write_wav(wav_path, tone, rate)
    samples, rate_back = read_wav(wav_path)
    print(f"wrote and re-read {samples.size} samples at {rate_back} Hz")

    mel = logmel(samples, rate_back, n_mels=64, win=win)
    print(f"spectrogram: {mel.n_frames} frames x {mel.n_bands} bands")
    hits = np.argmax(mel.frames, axis=1)
    print("band argmax, first 8 frames: ", hits[:8])
    print("band argmax, last 8 frames:  ", hits[-8:])

    feat_path = Path(tmp) / "mel.afm"
    write_features(feat_path, mel.frames)
    again = read_features(feat_path)
    print("AFM1 round trip matches float32 cast:",
          np.array_equal(again, mel.frames.astype(np.float32).astype(np.float64)))

print("\nParseval on the radix-2 FFT:")
sig = np.random.default_rng(0).standard_normal(2048)
spec = fft_radix2(sig)
print("time energy   ", np.sum(sig ** 2))
print("freq energy /N", np.sum(np.abs(spec) ** 2) / sig.size)
