"""A tour of the float64 tape-autodiff core.

Builds a few small expressions, runs backward, and checks one gradient
against central finite differences by hand.
"""

import numpy as np

from aftcap.autograd import Graph, Tensor, exp, layer_norm, matmul, mul, sigmoid, tsum

print("== forward ops ==")
x = Tensor([0.0, 1.0, 2.0])
print("exp(x)     =", exp(x).data)
print("sigmoid(x) =", sigmoid(x).data)

print("\n== a tape records every op executed under it ==")
w = Tensor(np.array([[0.5, -0.2], [0.1, 0.3], [-0.4, 0.8]]), requires_grad=True, name="w")
v = Tensor(np.array([[1.0, 2.0, 3.0]]))
with Graph() as graph:
    h = sigmoid(matmul(v, w))
    loss = tsum(mul(h, h))
print(f"tape length: {len(graph)} ops, loss = {loss.item():.6f}")

graph.backward(loss)
print("dloss/dw =\n", w.grad)

print("\n== spot-check against finite differences ==")
h_step = 1e-6
numeric = np.zeros_like(w.data)
for i in range(w.data.shape[0]):
    for j in range(w.data.shape[1]):
        keep = w.data[i, j]
        vals = []
        for delta in (+h_step, -h_step):
            w.data[i, j] = keep + delta
            hh = sigmoid(matmul(v, w))
            vals.append(tsum(mul(hh, hh)).item())
        w.data[i, j] = keep
        numeric[i, j] = (vals[0] - vals[1]) / (2 * h_step)
print("max |analytic - numeric| =", np.max(np.abs(w.grad - numeric)))

print("\n== layer norm maps a constant row to zeros ==")
row = Tensor([5.0, 5.0, 5.0, 5.0])
out = layer_norm(row, Tensor(np.ones(4)), Tensor(np.zeros(4)))
print("layer_norm([5,5,5,5]) =", out.data)
