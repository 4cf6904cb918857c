"""Small dense networks with hand-written exact gradients.

The architecture is fixed (two tanh hidden layers of 64 units, linear output),
so no autodiff framework is needed: forward, reverse-mode gradients, and
forward-over-reverse Fisher-vector products are spelled out by hand and
checked against finite differences in the tests.

All math is float64. Policy heads emit logits over the global action space
``[continue, escalate_to_1, ..., escalate_to_{K-1}]``; probability masking for
state-dependent validity happens in the caller via boolean masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

HIDDEN = 64


class NumericError(ArithmeticError):
    """Raised when non-finite values appear inside gradient or update math."""


@dataclass
class MlpParams:
    sizes: tuple  # (F, 64, 64, output_dim)
    weights: list  # [W1 (64,F), W2 (64,64), W3 (out,64)]
    biases: list  # [b1 (64,), b2 (64,), b3 (out,)]
    activation: str = "tanh"

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    def check_finite(self) -> None:
        for arr in (*self.weights, *self.biases):
            if not np.all(np.isfinite(arr)):
                raise NumericError("non-finite network parameter")


@dataclass
class PolicyHead:
    params: MlpParams

    @property
    def n_actions(self) -> int:
        return self.params.sizes[-1]


@dataclass
class CriticHead:
    params: MlpParams


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(feature_dim: int, output_dim: int, rng: np.random.Generator,
             final_scale: float = 0.01) -> MlpParams:
    """Orthogonal hidden layers (gain 1), final layer scaled down so the
    initial policy is near-uniform."""
    sizes = (feature_dim, HIDDEN, HIDDEN, output_dim)
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = final_scale if i == len(sizes) - 2 else 1.0
        weights.append(_orthogonal(rng, n_out, n_in, gain))
        biases.append(np.zeros(n_out))
    return MlpParams(sizes, weights, biases)


def flatten(params: MlpParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(params: MlpParams, vec: np.ndarray) -> MlpParams:
    if vec.shape != (params.n_params(),):
        raise ValueError("flat vector has the wrong dimension")
    weights, biases = [], []
    i = 0
    for w, b in zip(params.weights, params.biases):
        weights.append(vec[i:i + w.size].reshape(w.shape).copy())
        i += w.size
        biases.append(vec[i:i + b.size].copy())
        i += b.size
    return MlpParams(params.sizes, weights, biases, params.activation)


def _split_direction(params: MlpParams, vec: np.ndarray):
    """View a flat vector as per-layer (dW, db) pairs without copying semantics."""
    out = []
    i = 0
    for w, b in zip(params.weights, params.biases):
        dw = vec[i:i + w.size].reshape(w.shape)
        i += w.size
        db = vec[i:i + b.size]
        i += b.size
        out.append((dw, db))
    return out


def forward(params: MlpParams, x: np.ndarray):
    """Batched forward pass: x is (N, F); returns (logits (N, out), cache)."""
    w1, w2, w3 = params.weights
    b1, b2, b3 = params.biases
    h1 = np.tanh(x @ w1.T + b1)
    h2 = np.tanh(h1 @ w2.T + b2)
    logits = h2 @ w3.T + b3
    return logits, (x, h1, h2)


def backward(params: MlpParams, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of sum_i f_i w.r.t. flat params given dlogits = df/dlogits."""
    x, h1, h2 = cache
    w1, w2, w3 = params.weights
    dw3 = dlogits.T @ h2
    db3 = dlogits.sum(axis=0)
    dz2 = (dlogits @ w3) * (1.0 - h2 * h2)
    dw2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2) * (1.0 - h1 * h1)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2, dw3.ravel(), db3])


def jvp_logits(params: MlpParams, cache, direction: np.ndarray) -> np.ndarray:
    """Directional derivative of logits along a flat parameter direction."""
    x, h1, h2 = cache
    (dw1, db1), (dw2, db2), (dw3, db3) = _split_direction(params, direction)
    w2, w3 = params.weights[1], params.weights[2]
    dz1 = x @ dw1.T + db1
    dh1 = (1.0 - h1 * h1) * dz1
    dz2 = h1 @ dw2.T + dh1 @ w2.T + db2
    dh2 = (1.0 - h2 * h2) * dz2
    return h2 @ dw3.T + dh2 @ w3.T + db3


def masked_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-wise softmax restricted to mask-true entries (zeros elsewhere)."""
    z = np.array(logits, dtype=np.float64, copy=True)
    if z.ndim == 1:
        return masked_softmax(z[None, :], None if mask is None else mask[None, :])[0]
    if mask is not None:
        z[~np.broadcast_to(np.atleast_2d(mask), z.shape)] = -np.inf
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def policy_probs(head: PolicyHead, x: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    head.params.check_finite()
    logits, _ = forward(head.params, np.atleast_2d(x))
    p = masked_softmax(logits, mask)
    return p if np.asarray(x).ndim > 1 else p[0]


def grad_weighted_log_prob(head: PolicyHead, x: np.ndarray, mask: np.ndarray,
                           actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d/dtheta of sum_i weights[i] * log pi(actions[i] | x[i]), exact."""
    logits, cache = forward(head.params, x)
    p = masked_softmax(logits, mask)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(actions)), actions] = 1.0
    dlogits = weights[:, None] * (onehot - p)
    dlogits[~mask] = 0.0
    g = backward(head.params, cache, dlogits)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite policy gradient")
    return g


def grad_log_prob(head: PolicyHead, obs_vec: np.ndarray, action: int,
                  mask: Optional[np.ndarray] = None) -> np.ndarray:
    if mask is None:
        mask = np.ones((1, head.n_actions), dtype=bool)
    else:
        mask = np.atleast_2d(mask)
    return grad_weighted_log_prob(head, np.atleast_2d(obs_vec), mask,
                                  np.array([action]), np.ones(1))


def fisher_vector_product(head: PolicyHead, x: np.ndarray, v: np.ndarray,
                          damping: float = 0.0,
                          mask: Optional[np.ndarray] = None) -> np.ndarray:
    """(avg KL Hessian) @ v for the softmax policy, Gauss-Newton form (exact
    at the expansion point), plus damping * v."""
    x = np.atleast_2d(x)
    if v.shape != (head.params.n_params(),):
        raise ValueError("direction has the wrong dimension")
    if mask is None:
        mask = np.ones((x.shape[0], head.n_actions), dtype=bool)
    logits, cache = forward(head.params, x)
    p = masked_softmax(logits, mask)
    jv = jvp_logits(head.params, cache, v)
    u = p * jv - p * np.sum(p * jv, axis=1, keepdims=True)
    u[~mask] = 0.0
    hv = backward(head.params, cache, u) / x.shape[0]
    if not np.all(np.isfinite(hv)):
        raise NumericError("non-finite Fisher-vector product")
    return hv + damping * v


def kl_categorical(p_old: np.ndarray, p_new: np.ndarray) -> float:
    """Mean KL(p_old || p_new) over rows; rows must share support.

    Entries where p_old is 0 contribute nothing; a positive p_old over a zero
    p_new yields +inf, which callers treat as an automatic rejection.
    """
    p_old = np.atleast_2d(p_old)
    p_new = np.atleast_2d(p_new)
    live = p_old > 0.0
    if bool(np.any(live & (p_new <= 0.0))):
        return float("inf")
    ratio = np.where(live, p_old / np.where(p_new > 0.0, p_new, 1.0), 1.0)
    rows = np.sum(np.where(live, p_old * np.log(ratio), 0.0), axis=1)
    return float(np.mean(rows))


def grad_mean_kl(head: PolicyHead, x: np.ndarray, p_old: np.ndarray,
                 mask: np.ndarray) -> np.ndarray:
    """Gradient of mean KL(p_old || pi_theta) w.r.t. theta (for FD oracles)."""
    logits, cache = forward(head.params, x)
    p = masked_softmax(logits, mask)
    dlogits = (p - p_old) / x.shape[0]
    dlogits[~mask] = 0.0
    return backward(head.params, cache, dlogits)


def values(critic: CriticHead, x: np.ndarray) -> np.ndarray:
    critic.params.check_finite()
    out, _ = forward(critic.params, np.atleast_2d(x))
    return out[:, 0]


def value(critic: CriticHead, obs_vec: np.ndarray) -> float:
    return float(values(critic, obs_vec[None, :])[0])


def critic_loss_and_grad(critic: CriticHead, x: np.ndarray, targets: np.ndarray):
    """Mean squared error to targets and its exact gradient."""
    out, cache = forward(critic.params, x)
    resid = out[:, 0] - targets
    loss = float(np.mean(resid * resid))
    dlogits = (2.0 * resid / len(targets))[:, None]
    g = backward(critic.params, cache, dlogits)
    if not np.isfinite(loss) or not np.all(np.isfinite(g)):
        raise NumericError("non-finite critic loss or gradient")
    return loss, g


def params_to_obj(params: MlpParams) -> dict:
    return {
        "sizes": list(params.sizes),
        "activation": params.activation,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_obj(obj: dict) -> MlpParams:
    sizes = tuple(int(s) for s in obj["sizes"])
    weights = [np.array(w, dtype=np.float64) for w in obj["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
    params = MlpParams(sizes, weights, biases, obj.get("activation", "tanh"))
    expect = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
    got = [w.shape for w in weights]
    if got != expect:
        raise ValueError(f"weight shapes {got} do not match sizes {sizes}")
    return params
