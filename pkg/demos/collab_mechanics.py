"""Two little experiments behind the collaborative decoder.

1. Truncated-SVD reconstruction: keeping the top-r singular directions of a
   feature block leaves exactly the tail singular-value energy as residual,
   so the rank knob trades reconstruction error for denoising.
2. Cross-domain attention sanity: when the target features duplicate the
   source features, attending over the concatenated pair collapses to plain
   single-source attention - the mechanism only changes behavior when the
   two domains actually differ.
"""

import numpy as np

from unkdet.collab import cross_domain_attention
from unkdet.linalg import svd, truncated_reconstruct

rng = np.random.default_rng(42)

print("1. low-rank reconstruction residual vs tail singular energy")
block = rng.standard_normal((12, 8)) @ rng.standard_normal((8, 8))
singular = svd(block).sigma
for r in (1, 2, 4, 8):
    recon = truncated_reconstruct(block, r)
    residual = float(((block - recon) ** 2).sum())
    tail = float((singular[r:] ** 2).sum())
    print(f"  r={r}:  residual^2 {residual:10.4f}   "
          f"tail energy {tail:10.4f}   gap {abs(residual - tail):.2e}")

print("\n2. duplicated target == single-source attention")
dim, n = 8, 6
f_s = rng.standard_normal((n, dim))
w = {f"attn.{k}": rng.standard_normal((dim, dim)) * 0.3
     for k in ("w_q", "w_k", "w_v")}

q = f_s @ w["attn.w_q"].T
k = f_s @ w["attn.w_k"].T
v = f_s @ w["attn.w_v"].T
scores = q @ k.T
scores -= scores.max(axis=1, keepdims=True)
plain = (np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)) @ v

for joint in (True, False):
    dup = cross_domain_attention(f_s, f_s, w, "attn", joint_softmax=joint)
    print(f"  joint_softmax={joint!s:5s}  max |difference| "
          f"{np.abs(dup - plain).max():.2e}")

f_t = rng.standard_normal((n, dim))
mixed = cross_domain_attention(f_s, f_t, w, "attn", joint_softmax=True)
print(f"  distinct target          max |difference| "
      f"{np.abs(mixed - plain).max():.2e}  (mechanism now active)")
