"""
Reverse-mode autodiff and gradient reversal
============================================

A tiny graph built from ``nlidebias.autodiff``: the forward pass through
``grl`` is untouched, while the gradient reaching its input is flipped and
scaled. ``grl_block`` lets the value through and stops the gradient.
"""

import numpy as np

from nlidebias import autodiff as ad

# double precision makes the comparison easy to read
ad.set_default_dtype(np.float64)

x = ad.Parameter(np.array([[0.5, -1.0, 2.0]]), "x")
w = ad.Parameter(np.array([[1.0, 0.0, -1.0], [0.5, 2.0, 0.0], [0.0, 1.0, 1.0]]), "w")

###############################################################################
# Plain path: cross-entropy of ``tanh(x) @ w`` against class 2.

ad.backward(ad.softmax_xent(ad.matmul(ad.tanh(x), w), [2]))
plain = x.grad.copy()
print("plain gradient      ", plain)

###############################################################################
# Same loss with a reversal layer of strength 0.4 in front of ``tanh``.

ad.zero_grad([x, w])
out = ad.grl(x, 0.4)
assert out.value.tobytes() == x.value.tobytes()
ad.backward(ad.softmax_xent(ad.matmul(ad.tanh(out), w), [2]))
print("through grl(0.4)    ", x.grad, "= -0.4 * plain:", np.allclose(x.grad, -0.4 * plain))

###############################################################################
# ``grl_block`` is the zero-strength limit: ``w`` still learns, ``x`` does not.

ad.zero_grad([x, w])
ad.backward(ad.softmax_xent(ad.matmul(ad.tanh(ad.grl_block(x)), w), [2]))
print("through grl_block   ", x.grad, "| w still gets", np.abs(w.grad).sum().round(4))
