"""
Relay channel model: AWGN links, amplify-and-forward, MRC
==========================================================

Monte-Carlo walk through the channel primitives: noise power on one link,
the amplify-and-forward relay gain, its effective noise at the destination,
and the SNR gain of maximum-ratio combining the direct and relayed copies.
"""

# %%
# A unit-power Gaussian codeword and one 5 dB link
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from relayjscc import channel as ch

g = torch.Generator().manual_seed(0)
x = ch.normalize_power(ch.complex_noise((1, 200_000), 1.0, g, dtype=torch.float64))
link = ch.LinkConfig.from_snr_db(5.0)
y = ch.awgn_link(x, link, g)
print(f"noise variance {link.noise_var:.4f}, received power {float(ch.average_power(y)):.4f}")

# %%
# The AF relay rescales its observation to unit power before forwarding
links = ch.RelayLinks.from_snr_db(12.0, 5.0, 5.0)
z_r = ch.af_scale(ch.awgn_link(x, links.sr, g), links.sr)
print(f"beta = {ch.af_beta(links.sr):.4f}, relay output power {float(ch.average_power(z_r)):.4f}")
print(f"effective relay-path noise {ch.effective_af_noise_var(links):.4f}")

# %%
# MRC gain over the direct link as the S-R link improves
snr_sr = [0, 4, 8, 12, 16, 20, 30, math.inf]
measured, analytic = [], []
for s in snr_sr:
    links = ch.RelayLinks.from_snr_db(s, 5.0, 5.0)
    y_sd = ch.awgn_link(x, links.sd, g)
    y_rd = ch.awgn_link(ch.af_scale(ch.awgn_link(x, links.sr, g), links.sr), links.rd, g)
    err = ch.mrc_combine(y_sd, y_rd, links) - x
    measured.append(ch.snr_linear_to_db(1.0 / float(ch.average_power(err))))
    analytic.append(ch.snr_linear_to_db(ch.mrc_output_snr(links)))

xs = [s if s != math.inf else 40 for s in snr_sr]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(xs, analytic, label="analytic")
ax.plot(xs, measured, "o", label="Monte-Carlo")
ax.axhline(5.0, ls="--", c="gray", label="direct link only")
ax.axhline(5.0 + 10 * np.log10(2), ls=":", c="gray", label="two equal branches")
ax.set_xlabel("SNR_sr (dB), 40 = noiseless")
ax.set_ylabel("combined SNR (dB)")
ax.legend()
fig.tight_layout()
fig.savefig("mrc_gain.png")
