"""Exact transducer lattice loss, forward-backward posteriors, and gradients.

A logit lattice is a float64 array of shape (T, U+1, K) holding unnormalized
joint-network outputs z(t, u, k). Class 0 is the blank symbol: emitting it
advances time (a horizontal transition), while emitting the next reference
label advances the label index (a vertical transition). Every complete path
takes T-1 horizontal and U vertical steps and then exits by emitting blank at
node (T-1, U). All math runs in log domain at double precision with -inf as
the sentinel for impossible transitions.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CapacityError, InvalidInputError, InvalidLabelError

# Largest T+U for which brute-force path enumeration is allowed.
BRUTE_FORCE_LIMIT = 24


@dataclass
class LatticePosteriors:
    """Log-domain forward/backward variables over the (T, U+1) node grid.

    alpha[t, u] is the log-sum over path prefixes reaching node (t, u);
    beta[t, u] is the log-sum over path suffixes leaving it, including the
    terminal blank. log_likelihood = alpha[T-1, U] + log P(blank | T-1, U),
    which also equals beta[0, 0].
    """

    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood: float


@dataclass
class LossResult:
    """A scalar loss and its gradient w.r.t. the differentiated input."""

    loss: float
    grad: np.ndarray


def _as_lattice(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise InvalidInputError(f"logit lattice must have rank 3, got rank {z.ndim}")
    T, U1, K = z.shape
    if T < 1 or U1 < 1 or K < 2:
        raise InvalidInputError(f"lattice dims (T={T}, U+1={U1}, K={K}) out of range")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logit lattice contains non-finite entries")
    return z


def _as_labels(labels, num_classes: int, expected_len=None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if expected_len is not None and y.size != expected_len:
        raise InvalidLabelError(
            f"label sequence has length {y.size}, lattice expects U={expected_len}"
        )
    if y.size and (y.min() < 1 or y.max() >= num_classes):
        raise InvalidLabelError(
            f"label ids must lie in [1, {num_classes - 1}], got range "
            f"[{y.min()}, {y.max()}]"
        )
    return y


def softmax_lattice(logits) -> np.ndarray:
    """Per-node softmax over the class axis, stabilized by max subtraction."""
    z = _as_lattice(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_lattice(logits) -> np.ndarray:
    """Per-node log-softmax over the class axis, stabilized by max subtraction."""
    z = _as_lattice(logits)
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _transition_log_probs(logp: np.ndarray, y: np.ndarray):
    """Splits node log-probs into blank (T, U+1) and next-label (T, U) slices."""
    T, U1, _ = logp.shape
    lb = logp[:, :, 0]
    if y.size:
        ly = logp[:, :-1, :][:, np.arange(U1 - 1), y]
    else:
        ly = np.zeros((T, 0))
    return lb, ly


def _forward_backward(lb: np.ndarray, ly: np.ndarray):
    T, U1 = lb.shape

    alpha = np.full((T, U1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            from_blank = alpha[t - 1, u] + lb[t - 1, u] if t > 0 else -np.inf
            from_label = alpha[t, u - 1] + ly[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(from_blank, from_label)

    beta = np.full((T, U1), -np.inf)
    beta[T - 1, U1 - 1] = lb[T - 1, U1 - 1]
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if t == T - 1 and u == U1 - 1:
                continue
            via_blank = beta[t + 1, u] + lb[t, u] if t < T - 1 else -np.inf
            via_label = beta[t, u + 1] + ly[t, u] if u < U1 - 1 else -np.inf
            beta[t, u] = np.logaddexp(via_blank, via_label)

    log_likelihood = float(alpha[T - 1, U1 - 1] + lb[T - 1, U1 - 1])
    return alpha, beta, log_likelihood


def forward_backward(logits, labels) -> LatticePosteriors:
    """Runs the forward-backward recursions over the lattice.

    Args:
      logits: unnormalized lattice of shape (T, U+1, K).
      labels: the U reference token ids, each in [1, K-1].

    Returns:
      LatticePosteriors with alpha, beta of shape (T, U+1) and the sequence
      log-likelihood log P(labels | lattice).
    """
    z = _as_lattice(logits)
    y = _as_labels(labels, z.shape[-1], expected_len=z.shape[1] - 1)
    lb, ly = _transition_log_probs(log_softmax_lattice(z), y)
    alpha, beta, log_likelihood = _forward_backward(lb, ly)
    return LatticePosteriors(alpha=alpha, beta=beta, log_likelihood=log_likelihood)


def rnnt_loss(logits, labels) -> LossResult:
    """Negative log-likelihood of the label sequence, with logit gradients.

    The gradient at node (t, u) is gamma * p(k) minus the blank/label
    transition posteriors at their class slots, where gamma is the node
    occupancy. Column sums of the gradient vanish at every node.
    """
    z = _as_lattice(logits)
    T, U1, K = z.shape
    U = U1 - 1
    y = _as_labels(labels, K, expected_len=U)

    logp = log_softmax_lattice(z)
    lb, ly = _transition_log_probs(logp, y)
    alpha, beta, log_z = _forward_backward(lb, ly)

    # Blank transition posterior: interior rows hop to (t+1, u); the terminal
    # node exits the lattice (a beta continuation of exactly 0).
    beta_after_blank = np.full((T, U1), -np.inf)
    if T > 1:
        beta_after_blank[: T - 1, :] = beta[1:, :]
    beta_after_blank[T - 1, U] = 0.0
    q_blank = np.exp(alpha + lb + beta_after_blank - log_z)

    q_label = np.zeros((T, U1))
    if U > 0:
        q_label[:, :U] = np.exp(alpha[:, :U] + ly + beta[:, 1:] - log_z)

    gamma = q_blank + q_label
    grad = gamma[:, :, None] * np.exp(logp)
    grad[:, :, 0] -= q_blank
    if U > 0:
        grad[:, np.arange(U), y] -= q_label[:, :U]
    return LossResult(loss=-log_z, grad=grad)


def brute_force_rnnt_loss(logits, labels) -> float:
    """Loss by explicit enumeration of every monotone path. Test oracle.

    Walks all interleavings of T-1 blank steps and U label steps, appends the
    terminal blank at (T-1, U), and sums path probabilities in log domain.
    Guarded by BRUTE_FORCE_LIMIT on T+U.
    """
    z = _as_lattice(logits)
    T, U1, K = z.shape
    U = U1 - 1
    y = _as_labels(labels, K, expected_len=U)
    if T + U > BRUTE_FORCE_LIMIT:
        raise CapacityError(
            f"brute force enumeration supports T+U <= {BRUTE_FORCE_LIMIT}, "
            f"got {T + U}"
        )
    logp = log_softmax_lattice(z)

    n_steps = (T - 1) + U
    path_logs = []
    for label_steps in combinations(range(n_steps), U):
        label_steps = set(label_steps)
        t = u = 0
        total = 0.0
        for step in range(n_steps):
            if step in label_steps:
                total += logp[t, u, y[u]]
                u += 1
            else:
                total += logp[t, u, 0]
                t += 1
        total += logp[T - 1, U, 0]
        path_logs.append(total)
    return -float(np.logaddexp.reduce(path_logs))
