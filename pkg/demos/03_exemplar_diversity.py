"""
Picking feedback exemplars
==========================

Top-m by mask quality tends to pick near-duplicates; the diversity-aware
selector returns one exemplar per scale bin.
"""

import numpy as np

from persense.core import BBox
from persense.exemplar import ExemplarCandidate, scale_bins, select_diverse, top_m_by_score

rng = np.random.default_rng(0)
cands = []
for side in (4, 5, 9, 10, 15, 16):
    for cls in range(3):
        feat = np.eye(3)[cls] + rng.normal(0, 0.05, 3)
        box = BBox(0, 0, side - 1, side - 1)
        # larger masks get slightly higher quality, as a decoder tends to give
        q = float(np.clip(0.75 + 0.015 * side + rng.normal(0, 0.02), 0, 1))
        cands.append(ExemplarCandidate(box, None, q, feat, float(box.area), box.aspect))

top = top_m_by_score(cands, 4)
print("top-4 by quality, areas:", [c.area for c in top])

picked = select_diverse(cands, ref=cands[0])
print("diverse picks, areas:", [c.area for c in picked])
print("bins of the picks:", scale_bins([c.area for c in picked]))
