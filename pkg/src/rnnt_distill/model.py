"""A minimal trainable transducer with hand-derived backpropagation.

The encoder is a per-frame two-layer feed-forward net, the label predictor is
a stateless one-token-context embedding lookup (row 0 is the start-of-sequence
context), and the joint combines the two through one activated feed-forward
layer into K classes. Small enough that every gradient is written out by hand
and checkable against finite differences, yet it produces the full (T, U+1, K)
logit lattice the loss modules consume.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IncompatibleShapeError, InvalidParameterError
from .lattice import _as_labels

ACTIVATIONS = ("squared_relu", "swish")

PARAM_FIELDS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "embed", "joint_w", "joint_b")


def squared_relu(v):
    """max(0, v) squared; the derivative at the kink is taken as 0."""
    r = np.maximum(v, 0.0)
    return r * r


def squared_relu_deriv(v):
    return 2.0 * np.maximum(v, 0.0)


def sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def swish(v):
    """v * sigmoid(v)."""
    return v * sigmoid(v)


def swish_deriv(v):
    s = sigmoid(v)
    return s + v * s * (1.0 - s)


_ACT = {"squared_relu": (squared_relu, squared_relu_deriv), "swish": (swish, swish_deriv)}


@dataclass
class ToyTransducerParams:
    """All trainable tensors plus the activation selector.

    Shapes: enc_w1 (H, Fin), enc_b1 (H,), enc_w2 (H, H), enc_b2 (H,),
    embed (K, H) with row 0 the start-of-sequence context, joint_w (K, H),
    joint_b (K,).
    """

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    embed: np.ndarray
    joint_w: np.ndarray
    joint_b: np.ndarray
    activation: str = "squared_relu"

    @property
    def feature_dim(self) -> int:
        return self.enc_w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.enc_w1.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.joint_w.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "ToyTransducerParams":
        return ToyTransducerParams(
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
            activation=self.activation,
        )


@dataclass
class ParamGradients:
    """Gradient tensors mirroring ToyTransducerParams shapes."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    embed: np.ndarray
    joint_w: np.ndarray
    joint_b: np.ndarray

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}


def init_params(feature_dim, hidden_dim, vocab_size, activation="squared_relu",
                seed=0) -> ToyTransducerParams:
    """Seeded initialization: Glorot-uniform matrices, zero biases."""
    if activation not in ACTIVATIONS:
        raise InvalidParameterError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**64 - 1))))

    def glorot(rows, cols):
        s = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-s, s, size=(rows, cols))

    return ToyTransducerParams(
        enc_w1=glorot(hidden_dim, feature_dim),
        enc_b1=np.zeros(hidden_dim),
        enc_w2=glorot(hidden_dim, hidden_dim),
        enc_b2=np.zeros(hidden_dim),
        embed=glorot(vocab_size, hidden_dim),
        joint_w=glorot(vocab_size, hidden_dim),
        joint_b=np.zeros(vocab_size),
        activation=activation,
    )


def _check_features(params, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != params.feature_dim:
        raise IncompatibleShapeError(
            f"features must be ({params.feature_dim}, T), got shape {x.shape}"
        )
    return x


def encode(params: ToyTransducerParams, features) -> np.ndarray:
    """Per-frame encoder states of shape (T, H)."""
    x = _check_features(params, features)
    act, _ = _ACT[params.activation]
    pre = params.enc_w1 @ x + params.enc_b1[:, None]
    return (params.enc_w2 @ act(pre) + params.enc_b2[:, None]).T


def predict(params: ToyTransducerParams, labels) -> np.ndarray:
    """Predictor states of shape (U+1, H): start context then one row per token."""
    y = _as_labels(labels, params.vocab_size)
    return params.embed[np.concatenate(([0], y))]


def joint_logits(params: ToyTransducerParams, enc_states, pred_states) -> np.ndarray:
    """Joint network output lattice z(t, u, .) of shape (T, U+1, K)."""
    enc = np.asarray(enc_states, dtype=np.float64)
    pred = np.asarray(pred_states, dtype=np.float64)
    if enc.ndim != 2 or pred.ndim != 2 or enc.shape[1] != pred.shape[1]:
        raise IncompatibleShapeError(
            f"state shapes {enc.shape} and {pred.shape} are not joinable"
        )
    act, _ = _ACT[params.activation]
    hidden = act(enc[:, None, :] + pred[None, :, :])
    return hidden @ params.joint_w.T + params.joint_b


def lattice_for(params: ToyTransducerParams, features, labels) -> np.ndarray:
    """Full forward pass from features and labels to the logit lattice."""
    return joint_logits(params, encode(params, features), predict(params, labels))


def backprop(params: ToyTransducerParams, features, labels, lattice_grad,
             enc_state_grad=None) -> ParamGradients:
    """Chain rule from a lattice gradient back to every parameter tensor.

    Args:
      lattice_grad: dLoss/dz of shape (T, U+1, K) from an upstream LossResult.
      enc_state_grad: optional extra dLoss/d(encoder states) of shape (T, H),
        used by the encoder-consistency auxiliary loss.

    Returns:
      ParamGradients with the exact analytic gradients.
    """
    x = _check_features(params, features)
    y = _as_labels(labels, params.vocab_size)
    t_dim = x.shape[1]
    act, act_deriv = _ACT[params.activation]

    dz = np.asarray(lattice_grad, dtype=np.float64)
    if dz.shape != (t_dim, y.size + 1, params.vocab_size):
        raise IncompatibleShapeError(
            f"lattice grad shape {dz.shape} does not match "
            f"(T={t_dim}, U+1={y.size + 1}, K={params.vocab_size})"
        )

    # Forward intermediates.
    enc_pre = params.enc_w1 @ x + params.enc_b1[:, None]        # (H, T)
    enc_hidden = act(enc_pre)                                   # (H, T)
    enc_states = (params.enc_w2 @ enc_hidden + params.enc_b2[:, None]).T  # (T, H)
    pred_states = params.embed[np.concatenate(([0], y))]        # (U+1, H)
    joint_pre = enc_states[:, None, :] + pred_states[None, :, :]  # (T, U+1, H)

    # Joint layer.
    g_joint_b = dz.sum(axis=(0, 1))
    g_joint_w = np.einsum("tuk,tuh->kh", dz, act(joint_pre))
    d_hidden = np.einsum("tuk,kh->tuh", dz, params.joint_w) * act_deriv(joint_pre)

    d_enc = d_hidden.sum(axis=1)                                # (T, H)
    if enc_state_grad is not None:
        extra = np.asarray(enc_state_grad, dtype=np.float64)
        if extra.shape != d_enc.shape:
            raise IncompatibleShapeError(
                f"encoder state grad shape {extra.shape} != {d_enc.shape}"
            )
        d_enc = d_enc + extra
    d_pred = d_hidden.sum(axis=0)                               # (U+1, H)

    g_embed = np.zeros_like(params.embed)
    np.add.at(g_embed, np.concatenate(([0], y)), d_pred)

    # Encoder layers.
    d_enc_t = d_enc.T                                           # (H, T)
    g_enc_b2 = d_enc_t.sum(axis=1)
    g_enc_w2 = d_enc_t @ enc_hidden.T
    d_pre = (params.enc_w2.T @ d_enc_t) * act_deriv(enc_pre)
    g_enc_b1 = d_pre.sum(axis=1)
    g_enc_w1 = d_pre @ x.T

    return ParamGradients(
        enc_w1=g_enc_w1, enc_b1=g_enc_b1, enc_w2=g_enc_w2, enc_b2=g_enc_b2,
        embed=g_embed, joint_w=g_joint_w, joint_b=g_joint_b,
    )


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators, one pair per parameter tensor."""

    first_moment: dict
    second_moment: dict
    step: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: ToyTransducerParams, learning_rate: float):
        zeros = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        return cls(
            first_moment=zeros,
            second_moment={k: v.copy() for k, v in zeros.items()},
            step=0,
            learning_rate=learning_rate,
        )


def optimizer_step(params: ToyTransducerParams, grads: ParamGradients,
                   state: OptimizerState):
    """One bias-corrected adaptive-moment update. Returns (params, state), new
    objects; the inputs are left untouched."""
    step = state.step + 1
    new_arrays, m_out, v_out = {}, {}, {}
    for name, g in grads.arrays().items():
        m = state.beta1 * state.first_moment[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moment[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        new_arrays[name] = getattr(params, name) - state.learning_rate * m_hat / (
            np.sqrt(v_hat) + state.epsilon
        )
        m_out[name], v_out[name] = m, v
    new_params = ToyTransducerParams(**new_arrays, activation=params.activation)
    new_state = OptimizerState(
        first_moment=m_out, second_moment=v_out, step=step,
        learning_rate=state.learning_rate, beta1=state.beta1, beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return new_params, new_state


def greedy_decode(params: ToyTransducerParams, features, u_max: int) -> np.ndarray:
    """Deterministic argmax decoding for pseudo-label generation.

    Starting at (t=0, u=0), the argmax class of z(t, u, .) either advances
    time (blank) or appends a label and updates the one-token context. Stops
    after the last frame's blank; once u_max labels have been emitted the
    remaining frames are consumed as blanks.
    """
    if u_max < 1:
        raise InvalidParameterError(f"u_max must be >= 1, got {u_max}")
    enc = encode(params, features)
    act, _ = _ACT[params.activation]
    context = params.embed[0]
    out = []
    t = 0
    while t < enc.shape[0]:
        logits = params.joint_w @ act(enc[t] + context) + params.joint_b
        k = int(np.argmax(logits))
        if k == 0:
            t += 1
        else:
            out.append(k)
            context = params.embed[k]
            if len(out) >= u_max:
                break
    return np.asarray(out, dtype=np.int64)


def save_params(params: ToyTransducerParams, model_dir):
    """Writes one tensor file per parameter plus a small meta file."""
    from .tensorio import write_tensor

    path = Path(model_dir)
    path.mkdir(parents=True, exist_ok=True)
    for name, arr in params.arrays().items():
        write_tensor(path / f"{name}.rntd", arr)
    (path / "meta.txt").write_text(f"activation={params.activation}\n", encoding="utf-8")


def load_params(model_dir) -> ToyTransducerParams:
    from .tensorio import read_tensor

    path = Path(model_dir)
    meta = dict(
        line.split("=", 1)
        for line in (path / "meta.txt").read_text(encoding="utf-8").splitlines()
        if line
    )
    arrays = {name: read_tensor(path / f"{name}.rntd") for name in PARAM_FIELDS}
    return ToyTransducerParams(**arrays, activation=meta["activation"])
