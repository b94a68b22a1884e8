"""Pure numpy versions of the hot MLP/Adam kernels.

Same signatures and in-place semantics as the compiled ``_kernels`` module.
"""
import numpy as np

BACKEND = "python"


def mlp_forward(weights, biases, x):
    acts = [x]
    last = len(weights) - 1
    h = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.T + b
        if k < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def mlp_backward(weights, acts, grad_out, grad_weights, grad_biases):
    """Accumulate batch-summed gradients into ``grad_weights``/``grad_biases`` (overwritten)."""
    delta = grad_out
    for k in range(len(weights) - 1, -1, -1):
        np.matmul(delta.T, acts[k], out=grad_weights[k])
        np.sum(delta, axis=0, out=grad_biases[k])
        if k > 0:
            delta = delta @ weights[k]
            delta *= acts[k] > 0.0


def adam_update(params, grad, m, v, step, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    params -= lr * mhat / (np.sqrt(vhat) + eps)
