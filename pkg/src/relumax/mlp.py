"""Small dense ReLU network trained with ADAM on squared error.

Plain NumPy forward/backward; gradients are exact (up to the usual ReLU
kink convention) and checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dgp import make_rng
from .exceptions import ConfigurationError, TrainingError


@dataclass(frozen=True)
class MlpSpec:
    hidden_width: int = 10
    hidden_layers: int = 2
    learning_rate: float = 0.01
    epochs: int = 100
    batch: Optional[int] = None  # None = full batch
    seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ConfigurationError("hidden_width and hidden_layers must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch is not None and self.batch < 1:
            raise ConfigurationError("batch must be >= 1 or None")


class AdamState:
    """Per-parameter-list ADAM accumulator (shared by MLP and joint training)."""

    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place for one descent step."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Mlp:
    """ReLU hidden layers, affine scalar output, He-uniform fan-in init."""

    def __init__(self, in_dim: int, spec: MlpSpec):
        self.in_dim = in_dim
        self.spec = spec
        rng = make_rng(spec.seed)
        dims = [in_dim] + [spec.hidden_width] * spec.hidden_layers + [1]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._rng = rng

    # parameter plumbing -------------------------------------------------

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    # forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray):
        """Network output (m,) with cached pre-activations for backward."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        acts = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if li == last else np.maximum(z, 0.0)
            acts.append(a)
        return acts[-1][:, 0], (acts, pre)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(output), shape (m,)."""
        acts, pre = cache
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dout[:, None]
        for li in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[li]
            grads_w[li] = a_prev.T @ delta
            grads_b[li] = delta.sum(axis=0)
            if li > 0:
                delta = (delta @ self.weights[li].T) * (pre[li - 1] > 0.0)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads

    def mse_and_grads(self, x: np.ndarray, y: np.ndarray):
        out, cache = self.forward(x)
        resid = out - y
        loss = float(np.mean(resid**2))
        dout = 2.0 * resid / resid.size
        return loss, self.backward(cache, dout)

    # training -----------------------------------------------------------

    def train(self, x, y, *, stage="fit", lr=None, epochs=None):
        """ADAM on mean squared error; returns the per-epoch loss trace.

        The trace records the full-sample loss before each epoch's updates
        plus the final post-training loss (``epochs + 1`` entries).  Aborts
        with diagnostics on a non-finite loss.  ``lr``/``epochs`` override
        the spec values (used by staged training); ``lr`` may also be an
        ``(initial, final)`` pair for geometric decay over the epochs.
        """
        spec = self.spec
        lr = spec.learning_rate if lr is None else lr
        epochs = spec.epochs if epochs is None else epochs
        if np.ndim(lr) == 0:
            lr_path = np.full(epochs, float(lr))
        else:
            lr0, lr1 = (float(v) for v in lr)
            lr_path = lr0 * (lr1 / lr0) ** (np.arange(epochs) / max(epochs - 1, 1))
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        n = x.shape[0]
        opt = AdamState([p.shape for p in self.parameters()], lr_path[0])
        full_batch = spec.batch is None or spec.batch >= n
        losses = []
        for epoch in range(epochs):
            opt.lr = lr_path[epoch]
            if full_batch:
                loss, grads = self.mse_and_grads(x, y)
            else:
                loss = float(np.mean((self.predict(x) - y) ** 2))
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}",
                    stage=stage,
                    epoch=epoch,
                    loss=loss,
                )
            losses.append(loss)
            if full_batch:
                opt.step(self.parameters(), grads)
            else:
                order = self._rng.permutation(n)
                for lo in range(0, n, spec.batch):
                    sel = order[lo : lo + spec.batch]
                    _, grads = self.mse_and_grads(x[sel], y[sel])
                    opt.step(self.parameters(), grads)
        final = float(np.mean((self.predict(x) - y) ** 2))
        if not np.isfinite(final):
            raise TrainingError(
                f"non-finite loss {final} after training",
                stage=stage,
                epoch=epochs,
                loss=final,
            )
        losses.append(final)
        return losses
