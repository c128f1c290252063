"""
Reduced-scale comparison of the relaying schemes
================================================

Trains direct transmission, AF, PF and DF (lambda = 0) for 30 epochs on 5,000
natural-image patches with SNR_sr = 12 dB and gamma drawn from U(2, 8) dB, then
sweeps gamma over 0..8 dB on 512 held-out patches. Training takes about two
hours on one CPU. Weights are cached in ``.cache/desk_scale`` under the working
directory, so run from the repository root to reuse them.
"""

# %%
import logging

import matplotlib

matplotlib.use("Agg")

from relayjscc.evaluation import emit_plots, sweep_table
from relayjscc.experiments import desk_scale_study

logging.basicConfig(level=logging.INFO, format="%(message)s")
study = desk_scale_study()
results = study.run(".cache/desk_scale")

# %%
records = [r for res in results.values() for r in res["records"]]
print(sweep_table(records))
for name, res in results.items():
    print(f"{name:12s} best val loss {res['val_loss']:.5f}")
emit_plots(records, "desk_scale_plots")
