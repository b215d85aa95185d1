"""Reverse-mode automatic differentiation from the ground up.

Builds a tiny computation, walks the gradient back through it, and checks
every derivative against central finite differences. Finishes with a
two-layer network trained on a toy regression task to show the full
tensor -> loss -> backward -> optimizer loop.
"""
import numpy as np

from mssda.nn import Adam, Tensor, exp, relu, tsum

# ----------------------------------------------------------------------
# 1. Scalars first: a soft-plus-like composite y = log-free sigmoid(a*b)
# ----------------------------------------------------------------------
a = Tensor(np.array([0.7]), requires_grad=True)
b = Tensor(np.array([-1.3]), requires_grad=True)
z = a * b
y = exp(z) / (exp(z) + 1.0)          # sigmoid(a*b)
tsum(y).backward()

print("y             :", y.data)
print("dy/da (auto)  :", a.grad)

# by hand: dy/da = sigmoid'(z) * b = y*(1-y)*b
manual = y.data * (1.0 - y.data) * b.data
print("dy/da (hand)  :", manual)
assert np.allclose(a.grad, manual)

# ----------------------------------------------------------------------
# 2. Matrix ops against central finite differences
# ----------------------------------------------------------------------
rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)


def loss_value(w_data):
    return np.sum(np.maximum(x.data @ w_data, 0.0) ** 2)


out = relu(x @ w)
tsum(out * out).backward()

eps = 1e-6
fd = np.zeros_like(w.data)
for i in range(w.data.shape[0]):
    for j in range(w.data.shape[1]):
        up = w.data.copy(); up[i, j] += eps
        dn = w.data.copy(); dn[i, j] -= eps
        fd[i, j] = (loss_value(up) - loss_value(dn)) / (2 * eps)

err = np.max(np.abs(fd - w.grad) / (np.abs(fd) + 1.0))
print("\nmatmul/relu gradient vs finite differences, max rel err:", err)
assert err < 1e-6

# ----------------------------------------------------------------------
# 3. A small network fitted with Adam
# ----------------------------------------------------------------------
xs = rng.normal(size=(64, 2))
ys = (np.sin(xs[:, 0]) + 0.5 * xs[:, 1] ** 2)[:, None]

w1 = Tensor(rng.normal(size=(2, 16)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(16), requires_grad=True)
w2 = Tensor(rng.normal(size=(16, 1)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(1), requires_grad=True)
opt = Adam([("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)], lr=1e-2)

print("\ntraining 2-16-1 regression net:")
for step in range(400):
    hidden = relu(Tensor(xs) @ w1 + b1)
    pred = hidden @ w2 + b2
    diff = pred - Tensor(ys)
    loss = tsum(diff * diff) * (1.0 / len(xs))
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 100 == 0 or step == 399:
        print(f"  step {step:3d}  mse={float(loss.data):.5f}")

assert float(loss.data) < 0.05
print("fit succeeded.")
