"""
Overfitting eight image patches
===============================

A quick end-to-end check that every scheme can learn: fit eight fixed 32x32
natural-image patches over noiseless links for a few hundred Adam steps.
Takes a minute or two per scheme on a CPU.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from relayjscc import EncoderConfig, ProtocolSpec, RelayLinks
from relayjscc.data import natural_patches
from relayjscc.experiments import overfit

images = natural_patches(8, seed=1)
cfg = EncoderConfig(c_feat=64)
results = {}
for spec in [ProtocolSpec("AF"), ProtocolSpec("DF", 1.0), ProtocolSpec("PF"), ProtocolSpec("NONCOOP")]:
    system, score = overfit(spec, images, cfg, steps=300, lr=1e-3)
    results[spec.kind.value] = system
    print(f"{spec.kind.value:8s} train PSNR {score:.2f} dB")

# %%
# Reconstructions from the PF system
with torch.no_grad():
    out = results["PF"](images, RelayLinks.noiseless(), 0).s_hat
fig, axes = plt.subplots(2, 8, figsize=(12, 3))
for i in range(8):
    axes[0, i].imshow(images[i].permute(1, 2, 0))
    axes[1, i].imshow(out[i].permute(1, 2, 0))
    axes[0, i].axis("off")
    axes[1, i].axis("off")
fig.savefig("overfit_pf.png")
