"""
Checking the hand-written backward pass
=======================================

Every gradient in the model is derived by hand. Here they are compared
against central finite differences on a 15-node graph, for both branch
aggregations.
"""

import numpy as np

from spgat.graph import sbm_dataset
from spgat.model import ModelConfig, SpGAT, masked_softmax_xent
from spgat.train import build_operators, prepare_features

ds = sbm_dataset([8, 7], 0.6, 0.1, seed=3)
h = prepare_features(ds)
labels, mask = ds.split.labels, ds.split.train


def numeric_grad(model, param, eps=1e-6):
    out = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        old = param[idx]
        param[idx] = old + eps
        up = masked_softmax_xent(model.predict(h), labels, mask)[0]
        param[idx] = old - eps
        down = masked_softmax_xent(model.predict(h), labels, mask)[0]
        param[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


for agg in ("mean", "max"):
    cfg = ModelConfig(agg=agg, hidden=8)
    ops, _ = build_operators(cfg, ds.graph)
    model = SpGAT.build(cfg, ds.num_features, ds.num_classes, ops, seed=1)
    # move the attention off its symmetric start so its gradient is non-trivial
    for layer, logits in zip(model.layers, ([0.3, -0.2], [-0.5, 0.4])):
        layer.logits[:] = logits
    _, grads = model.loss_and_grads(h, labels, mask)
    print(agg.upper())
    for name, p in model.parameters().items():
        num = numeric_grad(model, p)
        err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(num), 1e-12)
        print(f"  {name:<14} relative error {err:.1e}")
