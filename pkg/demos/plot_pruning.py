"""
Global structured pruning
=========================

Columns from every layer compete for one shared budget. A layer full of
strong neurons keeps them all, a weak layer may lose everything.
"""

import numpy as np

from losparse.decomposition import init_from_pretrained
from losparse.pruner import apply_prune, neuron_refs, select_retained

scores = [[0.9, 0.8, 0.7, 0.6], [0.1, 0.05, 0.02, 0.01]]
kept = select_retained(neuron_refs(scores), 0.5)
print("kept:", sorted((n.layer_index, n.column_index) for n in kept))

###############################################################################
# Applying the selection zeroes the dropped columns of each sparse part. The
# low-rank factors are untouched, so every output neuron still gets the
# coherent component.

rng = np.random.default_rng(3)
layers = [init_from_pretrained(rng.standard_normal((6, 4)), 1) for _ in range(2)]
apply_prune(layers, kept)
for i, layer in enumerate(layers):
    print(f"layer {i}: live columns {layer.live_columns.astype(int)}, "
          f"nonzero S columns {np.flatnonzero(np.abs(layer.S).sum(axis=0)).tolist()}")
