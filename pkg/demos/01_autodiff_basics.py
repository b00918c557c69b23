"""A tour of the tensor core: build a graph, differentiate it, and verify
the gradients against central finite differences.
"""

import numpy as np

from xmf.tensor import Tensor, backward, check_gradients, matmul, relu, softmax_rows

rng = np.random.default_rng(0)

# Tensors wrap float64 arrays; ops build an implicit graph behind the scenes.
w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
x = Tensor(rng.normal(size=(2, 4)))

logits = matmul(x, w)
probs = softmax_rows(logits)
loss = (probs * probs).sum()

backward(loss)
print("loss:", float(loss.values))
print("dloss/dw:\n", w.grad)

# Softmax rows are probability vectors no matter how wild the logits are.
wild = softmax_rows(Tensor([[1e3, 1e3, -1e3], [0.0, 1.0, 2.0]]))
print("row sums:", wild.values.sum(axis=1))

# The engine's gradients agree with a finite-difference oracle.
err = check_gradients(lambda: relu(matmul(x, w)).sum(), [w])
print(f"max relative error vs finite differences: {err:.2e}")
