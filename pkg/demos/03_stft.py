"""Log-magnitude STFT: a 96 s, 21-lead epoch at 200 Hz becomes a 599 x 21 x 33 tensor."""

import numpy as np

from tgcn.stft import StftSpec, band_power, stft_log_magnitude

rate = 200.0
t = np.arange(19200) / rate
x = np.random.default_rng(0).standard_normal((19200, 21)) * 0.1
x[:, 4] += np.sin(2 * np.pi * 15.625 * t)   # a tone exactly on bin 5 of lead 4

spec = StftSpec(window_len=64, overlap=32)
out = stft_log_magnitude(x, spec)
print("spectrogram shape", out.shape)
print("loudest bin on lead 4:", int(np.argmax(out.data[:, 4].mean(axis=0))), "(bin width 3.125 Hz)")
power = band_power(x, spec, rate, (12.0, 18.0)).mean(axis=0)
print("12-18 Hz band power by lead:", np.round(power, 1))
