"""AFGRU classifier: stacked FFT-gated GRU blocks with attention and adaptive fusion.

Block ``i`` reads a sequence, replaces every step's input vector by the
real part of its DFT, runs a GRU over the result and pools the hidden
sequence into ``X_i``. The pooled outputs are fused with simplex weights
``w`` (updated multiplicatively from per-block errors, not by gradient)
and a shared sigmoid head produces the patient score. The STFA kernels
are part of the model and are trained jointly with the recurrent stack.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matdir
from .autograd import (Tensor, make, matmul, mse, reshape, sigmoid, sigmoid_array, softmax,
                       tanh, transpose)
from .fft import real_fft, real_fft_dense
from .sampling import rebuild
from .stfa import StfaBatch, StfaConfig, aggregate_batch, feature_layout
from .stfa import init_params as init_stfa_params

FUSIONS = ("adaptive", "uniform", "last")
OPTIMIZERS = ("sgd", "adam")
PRECISIONS = ("float64", "float32")


class NumericError(FloatingPointError):
    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


class TrainingError(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class AfgruConfig:
    hidden_size: int = 32
    n_blocks: int = 6
    use_fft: bool = True
    attention: bool = True
    fusion: str = "adaptive"
    gate_bias: bool = True

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("AfgruConfig.hidden_size must be >= 1")
        if self.n_blocks < 1:
            raise ValueError("AfgruConfig.n_blocks must be >= 1")
        if self.fusion not in FUSIONS:
            raise ValueError(f"AfgruConfig.fusion must be one of {FUSIONS}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 200
    weight_rounds: int = 500
    seed: int = 0
    precision: str = "float64"
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("TrainConfig.lr must be > 0")
        if self.epochs < 0:
            raise ValueError("TrainConfig.epochs must be >= 0")
        if self.weight_rounds < 0:
            raise ValueError("TrainConfig.weight_rounds must be >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"TrainConfig.precision must be one of {PRECISIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"TrainConfig.optimizer must be one of {OPTIMIZERS}")


# Ablation variants as overrides of the STFA and classifier configs.
ABLATIONS = {
    "stanet": ({}, {}),
    "agru": ({}, {"use_fft": False}),
    "atfgru": ({}, {"fusion": "uniform"}),
    "adfgru": ({}, {"attention": False}),
    "sgru": ({}, {"n_blocks": 1, "use_fft": False, "attention": False, "fusion": "last"}),
    "dgru": ({}, {"n_blocks": 2, "use_fft": False, "attention": False, "fusion": "last"}),
    "stanet_t": ({"branches": "temporal-only"}, {}),
    "stanet_s": ({"branches": "spatial-only"}, {}),
    "stfa_s": ({"single_scale_override": 7}, {}),
}


def apply_ablation(name: str, stfa_cfg: StfaConfig, cfg: AfgruConfig):
    try:
        stfa_over, model_over = ABLATIONS[name]
    except KeyError:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None
    return dataclasses.replace(stfa_cfg, **stfa_over), dataclasses.replace(cfg, **model_over)


# --- single-step reference operations ----------------------------------------
@dataclass
class FgruParams:
    W_z: np.ndarray  # hidden x (hidden + input)
    W_r: np.ndarray
    W: np.ndarray
    b_z: np.ndarray | None = None
    b_r: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        if not (self.W_z.shape == self.W_r.shape == self.W.shape):
            raise ValueError("W_z, W_r and W must share one shape")
        h = self.W_z.shape[0]
        if self.W_z.shape[1] <= h:
            raise ValueError("gate weights must be hidden x (hidden + input)")
        for name in ("b_z", "b_r", "b"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(h))

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1] - self.W_z.shape[0]


@dataclass
class FgruState:
    h: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    x: np.ndarray
    x_fft: np.ndarray


def fgru_step(x_t, h_prev, p: FgruParams, use_fft: bool = True) -> FgruState:
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape != (p.input_size,) or h_prev.shape != (p.hidden_size,):
        raise ValueError(
            f"fgru_step: expected x of {p.input_size} and h of {p.hidden_size}, "
            f"got {x_t.shape} and {h_prev.shape}"
        )
    x_fft = real_fft(x_t) if use_fft else x_t
    hx = np.concatenate([h_prev, x_fft])
    z = sigmoid_array(p.W_z @ hx + p.b_z)
    r = sigmoid_array(p.W_r @ hx + p.b_r)
    h_tilde = np.tanh(p.W @ np.concatenate([r * h_prev, x_fft]) + p.b)
    h = (1.0 - z) * h_prev + z * h_tilde
    return FgruState(h, z, r, h_tilde, x_t, x_fft)


def attention_pool(H, P, q) -> np.ndarray:
    """softmax-weighted mean of the rows of ``H`` with scores q . tanh(P h_t) / sqrt(hidden)."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    s = np.tanh(H @ np.asarray(P).T) @ np.asarray(q) / math.sqrt(H.shape[1])
    a = np.exp(s - s.max())
    a /= a.sum()
    return a @ H


def adaptive_weight_update(w, branch_errors, lr: float) -> np.ndarray:
    """One multiplicative round: ``w_i * exp(-lr * e_i)``, renormalised to the simplex."""
    w = np.asarray(w, dtype=np.float64)
    e = np.asarray(branch_errors, dtype=np.float64)
    if w.shape != e.shape:
        raise ValueError("weights and branch errors must have the same length")
    if not np.all(np.isfinite(e)):
        raise NumericError("non-finite branch error in adaptive weight update")
    if np.any(w <= 0) or not np.isclose(w.sum(), 1.0):
        raise ValueError("weights must be a positive simplex point")
    out = w * np.exp(-lr * e)
    return out / out.sum()


# --- differentiable layers ----------------------------------------------------
def real_fft_op(x: Tensor) -> Tensor:
    # Re(DFT) is multiplication by a symmetric cosine matrix, so its VJP is itself.
    return make(real_fft_dense(x.data), (x,), lambda g: (real_fft_dense(g),))


def _sigmoid(x):
    # tanh form: stable and a single transcendental call
    return 0.5 * np.tanh(0.5 * x) + 0.5


def gru_sequence(x: Tensor, W_z: Tensor, W_r: Tensor, W: Tensor, b_z: Tensor, b_r: Tensor,
                 b: Tensor) -> Tensor:
    """Run a GRU over ``x`` (B, T, D) from a zero state; returns hidden states (B, T, h).

    Backpropagation through time is written out by hand. The input
    projections of all steps are computed up front; the recurrent parts of
    the two gates share one product per step. Buffers are time-major so
    every per-step slice is contiguous.
    """
    B, T, D = x.shape
    X = np.ascontiguousarray(x.data.transpose(1, 0, 2))  # T, B, D
    h = W_z.shape[0]
    Wz, Wr, Wc = W_z.data, W_r.data, W.data
    Wg_h = np.concatenate([Wz[:, :h], Wr[:, :h]], axis=0)  # 2h x h
    Wg_x = np.concatenate([Wz[:, h:], Wr[:, h:]], axis=0)  # 2h x D
    Wc_h, Wc_x = np.ascontiguousarray(Wc[:, :h]), Wc[:, h:]
    Wg_hT, Wc_hT = np.ascontiguousarray(Wg_h.T), np.ascontiguousarray(Wc_h.T)
    xg = X @ Wg_x.T + np.concatenate([b_z.data, b_r.data])
    xc = X @ Wc_x.T + b.data

    dtype = X.dtype
    Hs = np.empty((T + 1, B, h), dtype=dtype)  # Hs[0] is the zero initial state
    Hs[0] = 0.0
    G = np.empty((T, B, 2 * h), dtype=dtype)  # z | r
    RH = np.empty((T, B, h), dtype=dtype)
    Ht = np.empty((T, B, h), dtype=dtype)
    for t in range(T):
        hp = Hs[t]
        g = G[t]
        np.matmul(hp, Wg_hT, out=g)
        g += xg[t]
        g[:] = _sigmoid(g)
        rh = RH[t]
        np.multiply(g[:, h:], hp, out=rh)
        ht = Ht[t]
        np.matmul(rh, Wc_hT, out=ht)
        ht += xc[t]
        np.tanh(ht, out=ht)
        np.add(hp, g[:, :h] * (ht - hp), out=Hs[t + 1])

    def back(gH):
        gH = gH.transpose(1, 0, 2)
        dG = np.empty_like(G)
        dC = np.empty_like(Ht)
        dnext = np.zeros((B, h), dtype=dtype)
        for t in range(T - 1, -1, -1):
            dh = gH[t] + dnext
            g, ht, hp = G[t], Ht[t], Hs[t]
            z, r = g[:, :h], g[:, h:]
            dc = dC[t]
            np.multiply(dh * z, 1.0 - ht * ht, out=dc)
            drh = dc @ Wc_h
            dg = dG[t]
            np.multiply(dh, ht - hp, out=dg[:, :h])
            np.multiply(drh, hp, out=dg[:, h:])
            dg *= g * (1.0 - g)
            dnext = dh * (1.0 - z) + drh * r + dg @ Wg_h
        Xf = X.reshape(T * B, D)
        Hp = Hs[:T].reshape(T * B, h)
        dGf, dCf = dG.reshape(T * B, 2 * h), dC.reshape(T * B, h)
        gWg_h, gWg_x = dGf.T @ Hp, dGf.T @ Xf
        gWz = np.concatenate([gWg_h[:h], gWg_x[:h]], axis=1)
        gWr = np.concatenate([gWg_h[h:], gWg_x[h:]], axis=1)
        gWc = np.concatenate([dCf.T @ RH.reshape(T * B, h), dCf.T @ Xf], axis=1)
        gx = (dG @ Wg_x + dC @ Wc_x).transpose(1, 0, 2)
        gb = dGf.sum(axis=0)
        return (gx, gWz, gWr, gWc, gb[:h], gb[h:], dCf.sum(axis=0))

    return make(np.ascontiguousarray(Hs[1:].transpose(1, 0, 2)), (x, W_z, W_r, W, b_z, b_r, b), back)


def attention_op(H: Tensor, P: Tensor, q: Tensor) -> Tensor:
    hidden = H.shape[-1]
    U = tanh(matmul(H, transpose(P)))
    scores = matmul(U, q) * (1.0 / math.sqrt(hidden))
    alpha = softmax(scores, axis=1)
    B, T = alpha.shape
    return (H * reshape(alpha, (B, T, 1))).sum(axis=1)


# --- model -----------------------------------------------------------------------
@dataclass
class AfgruModel:
    stfa_cfg: StfaConfig
    config: AfgruConfig
    n_components: int
    n_regions: int
    params: dict  # name -> ndarray
    weights: np.ndarray  # fusion weights, one per block
    curve: dict = field(default_factory=dict)

    @property
    def input_size(self) -> int:
        return sum(e.width for e in feature_layout(self.stfa_cfg, self.n_components, self.n_regions))

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "AfgruModel":
        return dataclasses.replace(self, params={k: v.copy() for k, v in self.params.items()},
                                   weights=self.weights.copy(), curve=dict(self.curve))

    def block_params(self, i: int) -> FgruParams:
        p = self.params
        return FgruParams(p[f"fgru{i}.W_z"], p[f"fgru{i}.W_r"], p[f"fgru{i}.W"],
                          p.get(f"fgru{i}.b_z"), p.get(f"fgru{i}.b_r"), p.get(f"fgru{i}.b"))

    def header(self) -> dict:
        return {
            "kind": "afgru",
            "stfa": _cfg_dict(self.stfa_cfg),
            "config": dataclasses.asdict(self.config),
            "n_components": self.n_components,
            "n_regions": self.n_regions,
            "weights": [float(x) for x in self.weights],
            "params": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
            "curve": self.curve,
        }

    def save(self, path) -> Path:
        blob = np.concatenate([v.astype(np.float64).ravel() for v in self.params.values()])
        return matdir.write_dir(path, self.header(), {"params": blob})

    @classmethod
    def load(cls, path) -> "AfgruModel":
        header, mats = matdir.read_dir(path)
        if header.get("kind") != "afgru":
            raise matdir.FormatError(f"{path}: not an afgru model directory")
        blob = mats["params"]
        params, pos = {}, 0
        for entry in header["params"]:
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            params[entry["name"]] = blob[pos:pos + size].reshape(entry["shape"])
            pos += size
        if pos != blob.size:
            raise matdir.FormatError(f"{path}: parameter blob has {blob.size} values, header needs {pos}")
        return cls(stfa_cfg_from_dict(header["stfa"]), AfgruConfig(**header["config"]),
                   header["n_components"], header["n_regions"], params,
                   np.asarray(header["weights"], dtype=np.float64), header.get("curve", {}))


def _cfg_dict(cfg: StfaConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["kernel_sizes"] = list(d["kernel_sizes"])
    d["pool"] = list(d["pool"])
    return d


def stfa_cfg_from_dict(d: dict) -> StfaConfig:
    d = dict(d)
    d["kernel_sizes"] = tuple(d.get("kernel_sizes", StfaConfig.kernel_sizes))
    d["pool"] = tuple(d.get("pool", StfaConfig.pool))
    return StfaConfig(**d)


def param_shapes(stfa_cfg: StfaConfig, cfg: AfgruConfig, n_components: int, n_regions: int) -> dict:
    from .stfa import param_shapes as stfa_shapes

    shapes = dict(stfa_shapes(stfa_cfg))
    h = cfg.hidden_size
    d_in = sum(e.width for e in feature_layout(stfa_cfg, n_components, n_regions))
    for i in range(1, cfg.n_blocks + 1):
        width = h + (d_in if i == 1 else h)
        for gate in ("W_z", "W_r", "W"):
            shapes[f"fgru{i}.{gate}"] = (h, width)
        if cfg.gate_bias:
            for gate in ("b_z", "b_r", "b"):
                shapes[f"fgru{i}.{gate}"] = (h,)
        if cfg.attention:
            shapes[f"attn{i}.P"] = (h, h)
            shapes[f"attn{i}.q"] = (h,)
    shapes["head.w"] = (h,)
    shapes["head.b"] = ()
    return shapes


def initial_weights(cfg: AfgruConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_blocks
    if cfg.fusion == "adaptive":
        g = rng.standard_normal(n)
        e = np.exp(g - g.max())
        return e / e.sum()
    if cfg.fusion == "uniform":
        return np.full(n, 1.0 / n)
    w = np.zeros(n)
    w[-1] = 1.0
    return w


def init_model(stfa_cfg: StfaConfig, cfg: AfgruConfig, n_components: int, n_regions: int,
               seed: int = 0) -> AfgruModel:
    """Weights uniform in +-1/sqrt(fan_in); biases zero; fusion weights per ``cfg.fusion``."""
    rng = np.random.default_rng(seed)
    params = init_stfa_params(stfa_cfg, rng)
    for name, shape in param_shapes(stfa_cfg, cfg, n_components, n_regions).items():
        if name in params:
            continue
        if name.startswith("fgru") and ".b" in name or name == "head.b":
            params[name] = np.zeros(shape)
            continue
        fan_in = shape[-1] if name.endswith((".W_z", ".W_r", ".W", ".P")) else cfg.hidden_size
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return AfgruModel(stfa_cfg, cfg, n_components, n_regions, params, initial_weights(cfg, rng))


@dataclass
class TrainingSet:
    """STFA inputs plus labels, optionally expanded by a balancing recipe."""

    batch: StfaBatch
    labels: np.ndarray
    origin: np.ndarray | None = None
    step: np.ndarray | None = None
    ids: list | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = self.batch.size if self.origin is None else len(self.origin)
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels.shape}")
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]


def _block_outputs(P: dict, cfg: AfgruConfig, seq: Tensor) -> list:
    outs = []
    zero = None
    for i in range(1, cfg.n_blocks + 1):
        inp = real_fft_op(seq) if cfg.use_fft else seq
        if cfg.gate_bias:
            biases = (P[f"fgru{i}.b_z"], P[f"fgru{i}.b_r"], P[f"fgru{i}.b"])
        else:
            if zero is None:
                zero = Tensor(np.zeros(cfg.hidden_size, dtype=seq.data.dtype))
            biases = (zero, zero, zero)
        seq = gru_sequence(inp, P[f"fgru{i}.W_z"], P[f"fgru{i}.W_r"], P[f"fgru{i}.W"], *biases)
        if cfg.attention:
            outs.append(attention_op(seq, P[f"attn{i}.P"], P[f"attn{i}.q"]))
        else:
            outs.append(seq[:, -1, :])
    return outs


def _fuse(P: dict, weights: np.ndarray, outs: list):
    fused = None
    for w, X in zip(weights, outs):
        if w == 0:
            continue
        term = X * float(w)
        fused = term if fused is None else fused + term
    if fused is None:
        fused = outs[-1] * 0.0
    return sigmoid(matmul(fused, P["head.w"]) + P["head.b"])


def _forward_seq(P: dict, model: AfgruModel, seq: Tensor):
    outs = _block_outputs(P, model.config, seq)
    return _fuse(P, model.weights, outs), outs


def _check_input(model: AfgruModel, batch: StfaBatch):
    if batch.cfg != model.stfa_cfg:
        raise ValueError("batch was built for a different STFA configuration")
    if (batch.n_components, batch.n_regions) != (model.n_components, model.n_regions):
        raise ValueError(
            f"model expects {model.n_components} ICs x {model.n_regions} regions, "
            f"batch has {batch.n_components} x {batch.n_regions}"
        )


def forward(model: AfgruModel, feature) -> tuple:
    """Score and block outputs for one fused feature (T' x D array or FusedFeature)."""
    data = getattr(feature, "data", feature)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.input_size:
        raise ValueError(f"feature must be T' x {model.input_size}, got {data.shape}")
    P = {k: Tensor(v) for k, v in model.params.items()}
    score, outs = _forward_seq(P, model, Tensor(data[None]))
    return float(score.data[0]), [o.data[0] for o in outs]


def predict(model: AfgruModel, batch: StfaBatch) -> np.ndarray:
    _check_input(model, batch)
    dtype = batch.dtype
    P = {k: Tensor(v.astype(dtype)) for k, v in model.params.items()}
    seq = aggregate_batch(batch, P)
    score, _ = _forward_seq(P, model, seq)
    return score.data.astype(np.float64)


def _loss_graph(model: AfgruModel, data: TrainingSet, P: dict):
    seq = aggregate_batch(data.batch, P)
    if data.origin is not None:
        seq = rebuild(seq, data.origin, data.step)
    score, outs = _forward_seq(P, model, seq)
    if not np.all(np.isfinite(score.data)):
        bad = int(np.flatnonzero(~np.isfinite(score.data))[0])
        raise NumericError(f"non-finite score for sample {data.ids[bad]}", data.ids[bad])
    loss = mse(score, data.labels.astype(score.data.dtype))
    return loss, score, outs


def loss_and_grads(model: AfgruModel, data: TrainingSet) -> tuple:
    """Mean squared error over ``data`` and its gradient for every parameter."""
    _check_input(model, data.batch)
    if len(data.labels) == 0:
        raise ValueError("empty batch")
    dtype = data.batch.dtype
    P = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in model.params.items()}
    loss, _, _ = _loss_graph(model, data, P)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite loss")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    return float(loss.data), grads


def branch_errors(model: AfgruModel, outs, labels) -> np.ndarray:
    """Signed mean error of each block's output pushed alone through the shared head."""
    w, b = model.params["head.w"], model.params["head.b"]
    return np.array([np.mean(sigmoid_array(X @ w + b) - labels) for X in outs])


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


def round_schedule(epochs: int, rounds: int) -> np.ndarray:
    """Adaptive-weight rounds to run after each epoch, spread evenly."""
    if epochs == 0:
        return np.zeros(0, dtype=np.int64)
    at = (np.arange(rounds) * epochs) // max(rounds, 1)
    return np.bincount(at, minlength=epochs).astype(np.int64)


def train(model: AfgruModel, data: TrainingSet, cfg: TrainConfig) -> AfgruModel:
    """Full-batch training; adaptive-weight rounds are interleaved with the epochs.

    Returns a new model; ``model`` is left untouched. The loss curve, the
    branch errors and the fusion-weight trajectory end up in ``curve``.
    """
    _check_input(model, data.batch)
    out = model.copy()
    if cfg.epochs == 0:
        return out
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    if data.batch.dtype != dtype:
        raise ValueError(f"batch precision {data.batch.dtype} does not match {cfg.precision}")
    params = {k: v.astype(dtype) for k, v in out.params.items()}
    opt = _Adam(cfg.lr) if cfg.optimizer == "adam" else _SGD(cfg.lr)
    schedule = round_schedule(cfg.epochs, cfg.weight_rounds)
    adaptive = out.config.fusion == "adaptive"
    losses, weight_path = [], [out.weights.tolist()]
    labels = data.labels
    for epoch in range(cfg.epochs):
        P = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        try:
            loss, _, outs = _loss_graph(out, data, P)
        except NumericError as err:
            raise TrainingError(f"epoch {epoch}: {err}", epoch) from err
        if not np.isfinite(loss.data):
            raise TrainingError(f"epoch {epoch}: loss is not finite", epoch)
        loss.backward()
        losses.append(float(loss.data))
        grads = {k: t.grad for k, t in P.items() if t.grad is not None}
        if adaptive and schedule[epoch]:
            out.params = {k: v.astype(np.float64) for k, v in params.items()}
            errs = branch_errors(out, [o.data.astype(np.float64) for o in outs], labels)
            for _ in range(schedule[epoch]):
                out.weights = adaptive_weight_update(out.weights, errs, cfg.lr)
            weight_path.append(out.weights.tolist())
        opt.step(params, grads)
    out.params = {k: v.astype(np.float64) for k, v in params.items()}
    out.curve = {"loss": losses, "weights": weight_path}
    return out
