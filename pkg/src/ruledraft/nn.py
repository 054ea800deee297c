"""Dense neural kernels with exact analytic gradients.

Single-sample forward/backward pairs for the fixed pipeline graph: linear
projection, one multi-head self-attention encoder block (post-norm), mean
pooling, a two-layer sigmoid concept head with hidden-layer dropout, focal
loss, and a bias-corrected Adam step. No autodiff tape: every backward here
is derived by hand and validated against central differences.

Conventions: rows are patches, float64 throughout, weights right-multiply
(`out = x @ w + b`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, PreconditionError, TrainingError
from .rng import RngStream

__all__ = [
    "ConfigurationError", "DimensionError", "PreconditionError", "TrainingError",
    "ProjectionParams", "EncoderParams", "ConceptHeadParams", "OptimState",
    "project_features", "project_features_backward", "encode_attend",
    "encode_attend_backward", "pool_mean", "pool_mean_backward",
    "predict_concepts", "predict_concepts_backward", "focal_loss", "bce_loss",
    "adam_step", "finite_diff_check", "dropout_mask",
]

EPS_PROB = 1e-7      # probability clamp before logarithms
LN_EPS = 1e-12       # layer-norm variance floor


def check_feature_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"feature matrix must be 2-D with positive dims, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("feature matrix contains non-finite entries")
    return x


def dropout_mask(shape, rate: float, rng: RngStream) -> np.ndarray:
    """Inverted-dropout keep mask: zeros at `rate`, survivors scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

@dataclass
class ProjectionParams:
    weight: np.ndarray  # (C', D)
    bias: np.ndarray    # (D,)

    @classmethod
    def init(cls, rng: RngStream, c_in: int, d_out: int) -> "ProjectionParams":
        scale = 1.0 / np.sqrt(c_in)
        return cls(weight=rng.normal(0.0, scale, (c_in, d_out)), bias=np.zeros(d_out))


def project_features(x: np.ndarray, p: ProjectionParams) -> np.ndarray:
    """Row-wise affine map of patch features into the retrieval embedding space."""
    x = check_feature_matrix(x)
    if x.shape[1] != p.weight.shape[0]:
        raise DimensionError(
            f"projection expects {p.weight.shape[0]} input features, got {x.shape[1]}")
    return x @ p.weight + p.bias


def project_features_backward(x: np.ndarray, p: ProjectionParams, dout: np.ndarray):
    """Returns (dx, {"weight": dw, "bias": db})."""
    dw = x.T @ dout
    db = dout.sum(axis=0)
    dx = dout @ p.weight.T
    return dx, {"weight": dw, "bias": db}


# ---------------------------------------------------------------------------
# layer norm (row-wise, biased variance)
# ---------------------------------------------------------------------------

def _layernorm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    out = xhat * gain + bias
    return out, (xhat, inv)


def _layernorm_backward(cache, gain: np.ndarray, dout: np.ndarray):
    xhat, inv = cache
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# encoder block
# ---------------------------------------------------------------------------

@dataclass
class EncoderParams:
    wq: np.ndarray        # (N_h, C', d_h)
    wk: np.ndarray        # (N_h, C', d_h)
    wv: np.ndarray        # (N_h, C', d_h)
    wo: np.ndarray        # (C', C')
    w1: np.ndarray        # (C', F)
    w2: np.ndarray        # (F, C')
    ln1_gain: np.ndarray  # (C',)
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    @property
    def n_heads(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, rng: RngStream, c_feat: int, n_heads: int, ff_dim: int | None = None) -> "EncoderParams":
        if n_heads < 1 or c_feat % n_heads != 0:
            raise ConfigurationError(
                f"feature dim {c_feat} must be divisible by head count {n_heads}")
        d_h = c_feat // n_heads
        f = ff_dim if ff_dim is not None else 4 * c_feat
        s_attn = 1.0 / np.sqrt(c_feat)
        s_ff = 1.0 / np.sqrt(f)
        return cls(
            wq=rng.normal(0.0, s_attn, (n_heads, c_feat, d_h)),
            wk=rng.normal(0.0, s_attn, (n_heads, c_feat, d_h)),
            wv=rng.normal(0.0, s_attn, (n_heads, c_feat, d_h)),
            wo=rng.normal(0.0, s_attn, (c_feat, c_feat)),
            w1=rng.normal(0.0, s_attn, (c_feat, f)),
            w2=rng.normal(0.0, s_ff, (f, c_feat)),
            ln1_gain=np.ones(c_feat), ln1_bias=np.zeros(c_feat),
            ln2_gain=np.ones(c_feat), ln2_bias=np.zeros(c_feat),
        )


@dataclass
class EncoderCache:
    x: np.ndarray
    q: np.ndarray          # (N_h, M, d_h)
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray       # (N_h, M, M) softmax rows
    concat: np.ndarray     # (M, C')
    ln1: tuple
    n1: np.ndarray
    ff_pre: np.ndarray     # pre-ReLU hidden
    ff_h: np.ndarray
    ln2: tuple
    mask_attn: np.ndarray | None
    mask_ff: np.ndarray | None


def encode_attend(x: np.ndarray, p: EncoderParams, dropout_rate: float = 0.0,
                  rng: RngStream | None = None):
    """One post-norm self-attention encoder block; returns (x_out, cache).

    Residuals wrap both the attention and feed-forward sublayers; each row of
    every attention matrix is a softmax distribution. Optional dropout sits on
    the two residual branches and requires an rng.
    """
    x = check_feature_matrix(x)
    n_h = p.n_heads
    c_feat = x.shape[1]
    if c_feat % n_h != 0 or p.wq.shape[1] != c_feat:
        raise ConfigurationError(
            f"feature dim {c_feat} incompatible with {n_h} heads of {p.wq.shape[1:]} params")
    if dropout_rate > 0.0 and rng is None:
        raise ConfigurationError("dropout requires an rng stream")
    d_h = c_feat // n_h
    scale = 1.0 / np.sqrt(d_h)

    q = np.einsum("mc,hcd->hmd", x, p.wq)
    k = np.einsum("mc,hcd->hmd", x, p.wk)
    v = np.einsum("mc,hcd->hmd", x, p.wv)
    scores = np.einsum("hmd,hnd->hmn", q, k) * scale
    attn = _softmax_rows(scores)
    heads = np.einsum("hmn,hnd->hmd", attn, v)               # (N_h, M, d_h)
    concat = np.transpose(heads, (1, 0, 2)).reshape(x.shape[0], c_feat)
    attn_out = concat @ p.wo

    mask_attn = None
    if dropout_rate > 0.0:
        mask_attn = dropout_mask(attn_out.shape, dropout_rate, rng)
        attn_out = attn_out * mask_attn

    u1 = x + attn_out
    n1, ln1_cache = _layernorm_forward(u1, p.ln1_gain, p.ln1_bias)

    ff_pre = n1 @ p.w1
    ff_h = np.maximum(ff_pre, 0.0)
    ff_out = ff_h @ p.w2
    mask_ff = None
    if dropout_rate > 0.0:
        mask_ff = dropout_mask(ff_out.shape, dropout_rate, rng)
        ff_out = ff_out * mask_ff

    u2 = n1 + ff_out
    out, ln2_cache = _layernorm_forward(u2, p.ln2_gain, p.ln2_bias)

    cache = EncoderCache(x=x, q=q, k=k, v=v, attn=attn, concat=concat,
                         ln1=ln1_cache, n1=n1, ff_pre=ff_pre, ff_h=ff_h,
                         ln2=ln2_cache, mask_attn=mask_attn, mask_ff=mask_ff)
    return out, cache


def encode_attend_backward(cache: EncoderCache, p: EncoderParams, dout: np.ndarray):
    """Returns (dx, grads dict keyed like EncoderParams fields)."""
    m, c_feat = cache.x.shape
    n_h = p.n_heads
    d_h = c_feat // n_h
    scale = 1.0 / np.sqrt(d_h)

    du2, dg2, db2 = _layernorm_backward(cache.ln2, p.ln2_gain, dout)
    dn1 = du2.copy()
    dff_out = du2 if cache.mask_ff is None else du2 * cache.mask_ff
    dw2 = cache.ff_h.T @ dff_out
    dff_h = dff_out @ p.w2.T
    dff_pre = dff_h * (cache.ff_pre > 0.0)
    dw1 = cache.n1.T @ dff_pre
    dn1 += dff_pre @ p.w1.T

    du1, dg1, db1 = _layernorm_backward(cache.ln1, p.ln1_gain, dn1)
    dx = du1.copy()
    dattn_out = du1 if cache.mask_attn is None else du1 * cache.mask_attn
    dwo = cache.concat.T @ dattn_out
    dconcat = dattn_out @ p.wo.T
    dheads = np.transpose(dconcat.reshape(m, n_h, d_h), (1, 0, 2))

    dattn = np.einsum("hmd,hnd->hmn", dheads, cache.v)
    dv = np.einsum("hmn,hmd->hnd", cache.attn, dheads)
    # softmax rows: dS = A * (dA - sum(dA*A, row))
    inner = (dattn * cache.attn).sum(axis=-1, keepdims=True)
    dscores = cache.attn * (dattn - inner)
    dq = np.einsum("hmn,hnd->hmd", dscores, cache.k) * scale
    dk = np.einsum("hmn,hmd->hnd", dscores, cache.q) * scale

    dwq = np.einsum("mc,hmd->hcd", cache.x, dq)
    dwk = np.einsum("mc,hmd->hcd", cache.x, dk)
    dwv = np.einsum("mc,hmd->hcd", cache.x, dv)
    dx += np.einsum("hmd,hcd->mc", dq, p.wq)
    dx += np.einsum("hmd,hcd->mc", dk, p.wk)
    dx += np.einsum("hmd,hcd->mc", dv, p.wv)

    grads = {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo, "w1": dw1, "w2": dw2,
             "ln1_gain": dg1, "ln1_bias": db1, "ln2_gain": dg2, "ln2_bias": db2}
    return dx, grads


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool_mean(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise PreconditionError(f"pooling needs at least one row, got shape {x.shape}")
    return x.mean(axis=0)


def pool_mean_backward(m: int, dvec: np.ndarray) -> np.ndarray:
    return np.tile(dvec / m, (m, 1))


# ---------------------------------------------------------------------------
# concept head
# ---------------------------------------------------------------------------

@dataclass
class ConceptHeadParams:
    w1: np.ndarray   # (C', H)
    b1: np.ndarray   # (H,)
    w2: np.ndarray   # (H, K)
    b2: np.ndarray   # (K,)
    dropout_rate: float = 0.1

    @classmethod
    def init(cls, rng: RngStream, c_in: int, hidden: int, k_out: int,
             dropout_rate: float = 0.1) -> "ConceptHeadParams":
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(c_in), (c_in, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, k_out)),
            b2=np.zeros(k_out),
            dropout_rate=dropout_rate,
        )


@dataclass
class HeadCache:
    xbar: np.ndarray
    pre1: np.ndarray
    h: np.ndarray
    h_dropped: np.ndarray
    mask: np.ndarray | None
    c_hat: np.ndarray


def predict_concepts(xbar: np.ndarray, p: ConceptHeadParams, dropout: bool = False,
                     rng: RngStream | None = None):
    """sigmoid(w2 @ relu(w1 @ xbar + b1) + b2); returns (c_hat, cache).

    With dropout=True the hidden layer is masked at p.dropout_rate using rng —
    this is the stochastic-inference mode the MC uncertainty passes rely on.
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    if xbar.shape != (p.w1.shape[0],):
        raise DimensionError(f"expected pooled vector of dim {p.w1.shape[0]}, got {xbar.shape}")
    pre1 = xbar @ p.w1 + p.b1
    h = np.maximum(pre1, 0.0)
    mask = None
    h_dropped = h
    if dropout and p.dropout_rate > 0.0:
        if rng is None:
            raise ConfigurationError("dropout requires an rng stream")
        mask = dropout_mask(h.shape, p.dropout_rate, rng)
        h_dropped = h * mask
    logits = h_dropped @ p.w2 + p.b2
    c_hat = 1.0 / (1.0 + np.exp(-logits))
    return c_hat, HeadCache(xbar=xbar, pre1=pre1, h=h, h_dropped=h_dropped,
                            mask=mask, c_hat=c_hat)


def predict_concepts_backward(cache: HeadCache, p: ConceptHeadParams, dc: np.ndarray):
    """Returns (dxbar, grads dict keyed w1/b1/w2/b2)."""
    dlogits = dc * cache.c_hat * (1.0 - cache.c_hat)
    dw2 = np.outer(cache.h_dropped, dlogits)
    db2 = dlogits
    dh_dropped = p.w2 @ dlogits
    dh = dh_dropped if cache.mask is None else dh_dropped * cache.mask
    dpre1 = dh * (cache.pre1 > 0.0)
    dw1 = np.outer(cache.xbar, dpre1)
    db1 = dpre1
    dxbar = p.w1 @ dpre1
    return dxbar, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


# ---------------------------------------------------------------------------
# focal loss
# ---------------------------------------------------------------------------

def focal_loss(c_hat: np.ndarray, y: np.ndarray, gamma: float = 2.0,
               alpha_bal: float = 0.25):
    """Alpha-balanced binary focal loss, mean over concepts.

    loss = mean_k[ -a*y*(1-c)^g*ln c - (1-a)*(1-y)*c^g*ln(1-c) ]

    Returns (loss, dloss/dc_hat). Reduces to alpha-weighted BCE at gamma=0.
    Probabilities are clamped to [EPS_PROB, 1-EPS_PROB] before the logs.
    """
    if gamma < 0:
        raise PreconditionError(f"gamma must be >= 0, got {gamma}")
    if not 0.0 < alpha_bal < 1.0:
        raise PreconditionError(f"alpha_bal must be in (0,1), got {alpha_bal}")
    c = np.clip(np.asarray(c_hat, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    y = np.asarray(y, dtype=np.float64)
    if c.shape != y.shape:
        raise DimensionError(f"prediction shape {c.shape} != target shape {y.shape}")
    k = c.size

    log_c = np.log(c)
    log_1c = np.log1p(-c)
    pos = -alpha_bal * y * (1.0 - c) ** gamma * log_c
    neg = -(1.0 - alpha_bal) * (1.0 - y) * c ** gamma * log_1c
    loss = float((pos + neg).sum() / k)

    # d/dc of the positive term: a*y*[g*(1-c)^(g-1)*ln c - (1-c)^g / c]
    # d/dc of the negative term: (1-a)*(1-y)*[c^g/(1-c) - g*c^(g-1)*ln(1-c)]
    if gamma > 0.0:
        dpos = alpha_bal * y * (gamma * (1.0 - c) ** (gamma - 1.0) * log_c
                                - (1.0 - c) ** gamma / c)
        dneg = (1.0 - alpha_bal) * (1.0 - y) * (c ** gamma / (1.0 - c)
                                                - gamma * c ** (gamma - 1.0) * log_1c)
    else:
        dpos = alpha_bal * y * (-1.0 / c)
        dneg = (1.0 - alpha_bal) * (1.0 - y) * (1.0 / (1.0 - c))
    return loss, (dpos + dneg) / k


def bce_loss(p: np.ndarray, y: np.ndarray):
    """Plain mean binary cross-entropy with the same clamp; returns (loss, dloss/dp)."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    y = np.asarray(y, dtype=np.float64)
    n = p.size
    loss = float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n)
    grad = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
    return loss, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimState) -> None:
    """Bias-corrected Adam update, in place on every array in `params`."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {theta.shape} for '{name}'")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        theta -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# gradient validation harness
# ---------------------------------------------------------------------------

def finite_diff_check(f, theta0: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    f maps a flat parameter vector to (scalar, gradient). Relative error per
    coordinate is |analytic - central| / max(1, |analytic|).
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    _, grad = f(theta0)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for i in range(theta0.size):
        tp = theta0.copy()
        tp.flat[i] += h
        tm = theta0.copy()
        tm.flat[i] -= h
        fp, _ = f(tp)
        fm, _ = f(tm)
        central = (fp - fm) / (2.0 * h)
        err = abs(grad.flat[i] - central) / max(1.0, abs(grad.flat[i]))
        worst = max(worst, err)
    return worst
