"""
The four transmission schemes side by side
==========================================

Builds AF, DF, PF and direct transmission for CIFAR-sized images and checks
their bandwidth, power and size bookkeeping on one random batch.
"""

# %%
import torch

from relayjscc import EncoderConfig, ProtocolSpec, RelayLinks, RelaySystem
from relayjscc.channel import average_power
from relayjscc.models import count_parameters

cfg = EncoderConfig(c_feat=32)
print(f"k = {cfg.k} complex symbols per image, latent {cfg.latent_shape}")

images = torch.rand(4, 3, 32, 32)
links = RelayLinks.from_snr_db(12.0, 5.0, 5.0)
specs = [ProtocolSpec("NONCOOP"), ProtocolSpec("AF"), ProtocolSpec("DF", 1.0), ProtocolSpec("PF")]

# %%
# Channel uses and transmit powers
for spec in specs:
    torch.manual_seed(0)
    system = RelaySystem(spec, cfg)
    with torch.no_grad():
        r = system(images, links, generator=0)
    powers = {k: round(float(average_power(v).mean()), 6) for k, v in r.transmitted.items()}
    relay = count_parameters(system.relay) if system.relay is not None else 0
    print(f"{spec.kind.value:8s} uses={r.channel_uses:4d} power={powers} "
          f"params={count_parameters(system):,} (relay {relay:,}) loss={float(r.loss):.4f}")

# %%
# DF adds lambda times the relay reconstruction error to its loss
torch.manual_seed(0)
df = RelaySystem(ProtocolSpec("DF", 2.0), cfg)
with torch.no_grad():
    r = df(images, links, generator=0)
print(f"dest {float(r.dest_loss):.4f} + 2 * relay {float(r.relay_loss):.4f} = {float(r.loss):.4f}")
