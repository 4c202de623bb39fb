"""
Neuron importance and the pruning schedule
==========================================

Sensitivity ``|w * g|`` is smoothed over steps, averaged per column, and
compared against a cubic budget that shrinks from 1 to the final fraction.
"""

import numpy as np

from losparse.importance import ImportanceState, ema_update, export_histogram, instant_sensitivity, neuron_scores
from losparse.schedule import PruneSchedule, remaining_fraction

rng = np.random.default_rng(2)
state = ImportanceState.zeros((6, 5), beta=0.85)
for step in range(30):
    s = rng.standard_normal((6, 5))
    s[:, 3] *= 0.01  # one neuron barely matters
    g = rng.standard_normal((6, 5))
    state = ema_update(state, instant_sensitivity(s, g))

scores = neuron_scores(state.smoothed)
print("neuron scores:", np.round(scores, 4))
print("least important column:", int(np.argmin(scores)))

for low, high, count in export_histogram(scores, 3):
    print(f"  [{low:.3f}, {high:.3f}]  {count}")

###############################################################################
# The schedule: full model during warm-up, cubic decay, then a flat tail for
# fine-tuning at the final fraction.

sched = PruneSchedule(total_steps=100, warmup_steps=10, final_steps=10, final_fraction=0.1)
for t in (0, 10, 30, 50, 70, 90, 100):
    print(f"t={t:3d}  p_t={remaining_fraction(sched, t):.4f}")
