"""What the four attention modes look like from the outside: output widths,
parameter counts, and the attention weights you can export for diagnostics.
"""

import numpy as np

from xmf.attention import AttentionBlock, AttentionConfig, cross_modal_pair, scaled_dot_product
from xmf.fusion import AttentionMode, ModelConfig, build
from xmf.seeding import rng_for
from xmf.tensor import Tensor

# Scaled dot-product attention on a toy sequence: three query tokens attend
# over four key/value tokens; every weight row is a probability vector.
rng = np.random.default_rng(1)
q, k, v = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(4, 8)))
out, weights = scaled_dot_product(q, k, v, return_weights=True)
print("attention weights (rows sum to 1):\n", np.round(weights.values, 3))

# Bi-directional cross-modal attention doubles the feature width: one half
# attends a->b, the other b->a.
cfg = AttentionConfig(d_model=8, num_heads=2)
ab, ba = AttentionBlock(cfg, rng_for(0, "ab")), AttentionBlock(cfg, rng_for(0, "ba"))
a, b = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
print("cross-modal pair output width:", cross_modal_pair(ab, ba, a, b).shape)

# The fused model's decision-layer width and parameter count depend on the
# attention mode: cross modes concatenate one 2*d_model block per pair.
base = dict(d_model=16, num_heads=2, tokens_per_modality=2, clinical_dim=10, genetic_dim=12, image_shape=(1, 12, 12), clinical_hidden=(8, 8), genetic_hidden=(8, 8), conv_channels=(2, 3, 4), conv_strides=(2, 1, 1))
for mode in AttentionMode:
    model = build(ModelConfig(mode=mode, **base))
    print(f"{mode.value:15s} decision width {model.decision_weight.shape[0]:3d}   parameters {model.parameter_count():6d}")
