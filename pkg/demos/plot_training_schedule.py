"""
Plateau learning-rate schedule and early stopping
=================================================

Feeds a synthetic validation-loss curve through the schedule used in training:
the rate drops by 0.8 after 4 epochs without a new best, and training stops
after 12 such epochs.
"""

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from relayjscc.training import PlateauSchedule

rng = np.random.default_rng(0)
epochs = np.arange(1, 201)
trace = 0.01 + 0.02 * np.exp(-epochs / 25) + 0.0004 * rng.standard_normal(len(epochs))

sched = PlateauSchedule()
sched.set_reference(1.0)
lrs, seen = [], []
for v in trace:
    if sched.should_stop:
        break
    lrs.append(sched.lr)
    seen.append(v)
    sched.step(v)
print(f"stopped after epoch {sched.epoch}, final lr {sched.lr:.3g}, best loss {sched.best:.5f}")

fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(5, 4))
a.plot(range(1, len(seen) + 1), seen)
a.set_ylabel("val loss")
b.step(range(1, len(lrs) + 1), lrs, where="post")
b.set_ylabel("learning rate")
b.set_xlabel("epoch")
fig.tight_layout()
fig.savefig("schedule.png")
