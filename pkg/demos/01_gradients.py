"""Build a tiny conv net by hand and confirm its gradients numerically.

Run: python demos/01_gradients.py
"""
import numpy as np

from terracer.autodiff import Tensor, conv2d, max_unpool2d, maxpool2d_with_indices, relu, softmax_cross_entropy

rng = np.random.default_rng(0)
x = rng.normal(size=(1, 3, 8, 8))
w = Tensor(rng.normal(scale=0.3, size=(4, 3, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
labels = rng.integers(0, 4, size=(1, 8, 8))


def loss_of(weights: np.ndarray) -> float:
    """Forward pass only: conv, relu, pool, unpool back to full size, then cross-entropy."""
    h = relu(conv2d(Tensor(x), Tensor(weights), b, padding=1))
    pooled, idx = maxpool2d_with_indices(h)
    return float(softmax_cross_entropy(max_unpool2d(pooled, idx), labels).data)


h = relu(conv2d(Tensor(x), w, b, padding=1))
pooled, idx = maxpool2d_with_indices(h)
restored = max_unpool2d(pooled, idx)
loss = softmax_cross_entropy(restored, labels)
loss.backward()
print(f"loss {float(loss.data):.6f}")
print(f"unpooling scatters {pooled.data.size} maxima back into {restored.data.size} slots, zeros elsewhere")

eps = 1e-6
worst = 0.0
for flat in rng.choice(w.data.size, size=12, replace=False):
    plus, minus = w.data.copy(), w.data.copy()
    plus.flat[flat] += eps
    minus.flat[flat] -= eps
    numeric = (loss_of(plus) - loss_of(minus)) / (2 * eps)
    analytic = w.grad.flat[flat]
    rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)
    worst = max(worst, rel)
    print(f"  w{tuple(int(i) for i in np.unravel_index(flat, w.data.shape))}  analytic {analytic:+.8f}  numeric {numeric:+.8f}")
print(f"largest relative disagreement: {worst:.2e}")
