"""Minimal dense Q-network with hand-rolled backprop and Adam.

Intentionally small: fully connected layers, ReLU on hidden layers,
linear output (Q values are unbounded). Everything is float64 and
seeded, so runs are bit-reproducible. No autodiff framework; the
gradient path is checked against central finite differences.

All parameters live in one flat vector with per-layer views, so the
optimizer and the soft target update are a few fused vector operations
instead of dozens of small-array calls (these nets are tiny and the
training loops are per-step, so call overhead dominates otherwise).
"""

from __future__ import annotations

import json

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


class Network:
    """Feed-forward net: weights[k] has shape (fan_out, fan_in).

    Init is uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
    """

    def __init__(self, layer_sizes, seed=0):
        self._build(layer_sizes)
        rng = np.random.default_rng(seed)
        for w in self.weights:
            bound = 1.0 / np.sqrt(w.shape[1])
            w[...] = rng.uniform(-bound, bound, size=w.shape)

    def _build(self, layer_sizes):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2:
            raise ValueError(f"need at least input and output sizes, got {layer_sizes}")
        if any(s <= 0 for s in layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
        self.layer_sizes = layer_sizes
        total = sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
        self.flat = np.zeros(total)
        self.weights, self.biases = self._views(self.flat)

    def _views(self, flat):
        weights, biases, off = [], [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(flat[off:off + fan_in * fan_out].reshape(fan_out, fan_in))
            off += fan_in * fan_out
            biases.append(flat[off:off + fan_out])
            off += fan_out
        return weights, biases

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Per-tensor views into the flat vector, weights and biases interleaved."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        other = Network.__new__(Network)
        other.layer_sizes = list(self.layer_sizes)
        other.flat = self.flat.copy()
        other.weights, other.biases = other._views(other.flat)
        return other

    @classmethod
    def from_arrays(cls, layer_sizes, weights, biases):
        net = cls.__new__(cls)
        net._build(layer_sizes)
        for dst, src in zip(net.weights, weights):
            dst[...] = src
        for dst, src in zip(net.biases, biases):
            dst[...] = src
        return net

    def forward(self, x):
        """Q values for a single observation vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.layer_sizes[0],):
            raise ValueError(f"input shape {x.shape} != ({self.layer_sizes[0]},)")
        h = x
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = w @ h + b
            if k != last:
                np.maximum(h, 0.0, out=h)
        return h

    def forward_batch(self, xs):
        """Q values for a batch, shape (b, out_dim)."""
        out, _ = self._forward_cached(np.asarray(xs, dtype=np.float64))
        return out

    def _forward_cached(self, xs):
        """Batch forward keeping post-activations for backprop."""
        if xs.ndim != 2 or xs.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"batch shape {xs.shape} incompatible with input dim {self.layer_sizes[0]}")
        activations = [xs]  # input, then each layer's output
        last = self.n_layers - 1
        h = xs
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if k == last else np.maximum(z, 0.0)
            activations.append(h)
        return h, activations

    def _backward(self, activations, grad_out):
        """Flat gradient of a scalar loss wrt the flat parameter vector.

        ReLU subgradient at 0 is taken as 0. The returned buffer is
        reused across calls; consume it before the next backward pass.
        """
        cache = getattr(self, "_grad_cache", None)
        if cache is None:
            grad_flat = np.empty_like(self.flat)
            cache = (grad_flat, *self._views(grad_flat))
            self._grad_cache = cache
        grad_flat, gw_views, gb_views = cache
        g = grad_out
        for k in range(self.n_layers - 1, -1, -1):
            np.matmul(g.T, activations[k], out=gw_views[k])
            g.sum(axis=0, out=gb_views[k])
            if k > 0:
                g = g @ self.weights[k]
                g *= activations[k] > 0.0
        return grad_flat


class AdamState:
    """Moment accumulators over a Network's flat parameter vector."""

    def __init__(self, net, learning_rate=0.001, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = np.zeros_like(net.flat)
        self.v = np.zeros_like(net.flat)

    def apply(self, net, grad_flat):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        m, v = self.m, self.v
        m *= b1
        m += (1.0 - b1) * grad_flat
        v *= b2
        v += (1.0 - b2) * (grad_flat * grad_flat)
        denom = np.sqrt(v / corr2)
        denom += self.eps
        net.flat -= (self.learning_rate / corr1) * m / denom


def train_step(net, opt, inputs, action_indices, targets, weights):
    """One weighted Q-regression step; returns the loss before the update.

    Minimizes mean_i (w_i * (y_i - Q(x_i, a_i)))^2. Only the output unit
    picked by action_indices[i] receives direct error for sample i. An
    exactly-zero gradient (every w_i^2 * delta_i == 0) skips the
    optimizer entirely so that fully masked batches leave the parameters
    and moments untouched.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    action_indices = np.asarray(action_indices, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    b = inputs.shape[0] if inputs.ndim == 2 else -1
    if b < 1:
        raise ValueError(f"inputs must be a nonempty batch, got shape {inputs.shape}")
    if not (len(action_indices) == len(targets) == len(weights) == b):
        raise ValueError(
            f"batch length mismatch: inputs {b}, actions {len(action_indices)}, "
            f"targets {len(targets)}, weights {len(weights)}"
        )
    if not np.isfinite(inputs).all():
        raise ValueError("non-finite values in inputs")
    if not (np.isfinite(targets).all() and np.isfinite(weights).all()):
        raise ValueError("non-finite values in targets or weights")

    q, activations = net._forward_cached(inputs)
    rows = np.arange(b)
    delta = targets - q[rows, action_indices]
    wdelta = weights * delta
    loss = float(np.mean(wdelta * wdelta))

    grad_sel = -(2.0 / b) * weights * wdelta  # dLoss/dQ(x_i, a_i)
    if not np.any(grad_sel):
        return loss
    grad_out = np.zeros_like(q)
    grad_out[rows, action_indices] = grad_sel
    opt.apply(net, net._backward(activations, grad_out))
    return loss


def soft_update(target_net, online_net, tau):
    """target <- tau * online + (1 - tau) * target, elementwise."""
    if target_net.layer_sizes != online_net.layer_sizes:
        raise ValueError(
            f"shape mismatch: target {target_net.layer_sizes} vs online {online_net.layer_sizes}"
        )
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    target_net.flat *= 1.0 - tau
    target_net.flat += tau * online_net.flat


def gradient_of_output(net, x, action_index):
    """Analytic gradient (flat) of the scalar Q(x, action_index)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    out, activations = net._forward_cached(x)
    grad_out = np.zeros_like(out)
    grad_out[0, action_index] = 1.0
    return net._backward(activations, grad_out)


def finite_diff_check(net, x, action_index, epsilon=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Relative error uses a 1e-6 floor on the denominator so that near-dead
    paths (both gradients ~0) do not blow up on roundoff noise.
    """
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    analytic = gradient_of_output(net, x, action_index)
    x = np.asarray(x, dtype=np.float64)
    flat = net.flat
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = net.forward(x)[action_index]
        flat[i] = orig - epsilon
        lo = net.forward(x)[action_index]
        flat[i] = orig
        gfd = (hi - lo) / (2.0 * epsilon)
        denom = max(abs(analytic[i]), abs(gfd), 1e-6)
        worst = max(worst, abs(analytic[i] - gfd) / denom)
    return worst


def save_network(path, net, opt=None):
    """Versioned npz dump of layer sizes + parameters (+ optimizer state)."""
    arrays = {"version": np.array(CHECKPOINT_VERSION), "layer_sizes": np.array(net.layer_sizes)}
    for k in range(net.n_layers):
        arrays[f"w{k}"] = net.weights[k]
        arrays[f"b{k}"] = net.biases[k]
    if opt is not None:
        meta = {
            "learning_rate": opt.learning_rate,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "step_count": opt.step_count,
        }
        arrays["adam_meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        arrays["adam_m"] = opt.m
        arrays["adam_v"] = opt.v
    np.savez(path, **arrays)


def load_network(path):
    """Inverse of save_network; returns (net, opt_or_None), bit-exact."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = [int(s) for s in data["layer_sizes"]]
        n_layers = len(sizes) - 1
        net = Network.from_arrays(
            sizes,
            [data[f"w{k}"] for k in range(n_layers)],
            [data[f"b{k}"] for k in range(n_layers)],
        )
        opt = None
        if "adam_meta" in data:
            meta = json.loads(bytes(data["adam_meta"]).decode())
            opt = AdamState(net, meta["learning_rate"], meta["beta1"], meta["beta2"], meta["eps"])
            opt.step_count = int(meta["step_count"])
            opt.m = data["adam_m"].copy()
            opt.v = data["adam_v"].copy()
    return net, opt
