"""
Rejecting oversized masks
=========================

A background prompt decoded into a large blob is caught by the area
statistics, unless a detection box vouches for it.
"""

import numpy as np

from persense.core import BBox, Detection, InstanceMask
from persense.imrm import area_stats, filter_masks

shape = (80, 80)
masks = []
for i in range(9):
    m = np.zeros(shape, np.uint8)
    m[4:9, 4 + 8 * i:9 + 8 * i] = 1
    masks.append(InstanceMask(m, 0.9))
blob = np.zeros(shape, np.uint8)
blob[30:75, 20:70] = 1
masks.append(InstanceMask(blob, 0.7))

s = area_stats([m.area for m in masks])
print(f"Q1={s.q1} Q3={s.q3} majority mean={s.mu_maj} sd={s.sigma_maj:.2f} -> cutoff {s.t_final:.1f}")
print("kept without detections:", len(filter_masks(masks, [])))

# a near object that really is large: its detection box matches the mask box
det = Detection(BBox(20, 31, 69, 74), 0.8, "object")
print("kept with a matching detection:", len(filter_masks(masks, [det])))
