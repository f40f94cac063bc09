"""Toy-scale training with weight/converter quantization and output noise in
the loop, so the trained LSTM survives deployment on the noisy macro.

Hardware gain: a pre-activation of one MAC unit equals one ramp unit ``s``
in activation-input units. With inputs in [-1, 1] driven as up to ``x_max``
pulses, an integer weight step is therefore worth ``s * x_max`` in the real
domain. Gate g (tanh) shares the sigmoid ramp and so has half the scale.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import make_activation
from .adc import AdcConfig, design
from .codec import TERNARY_THRESHOLD, decode_matrix, encode_matrix, scheme_for
from .errors import ConfigError, TrainingError
from .lstm import LstmModel

FC_BITS = 8


@dataclass(frozen=True)
class TaskSpec:
    """Classify the dominant frequency of a noisy multi-channel sinusoid."""

    n_classes: int = 4
    seq_len: int = 16
    input_dim: int = 4
    noise: float = 0.3
    n_train: int = 1600
    n_test: int = 200


@dataclass(frozen=True)
class TrainConfig:
    noise_sigma: float = 0.05
    quant_bits: int = 3
    adc_bits: int = 5
    x_bits: int = 4
    hidden_dim: int = 8
    lr: float = 3e-2
    lr_final: float = 0.05  # cosine decay to this fraction of lr
    epochs: int = 40
    batch: int = 32
    seed: int = 0
    task: TaskSpec = field(default_factory=TaskSpec)
    quantize: bool = True  # False bypasses every quantizer (float LSTM)
    eval_noise_draws: int = 5

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 2 <= self.quant_bits <= 5:
            raise ConfigError("quant_bits must be 2..5")
        if self.batch < 1 or self.hidden_dim < 1:
            raise ConfigError("batch and hidden_dim must be positive")

    @property
    def x_max(self) -> int:
        return 2 ** (self.x_bits - 1) - 1

    def to_dict(self) -> dict:
        return asdict(self)


def make_task(task: TaskSpec, seed: int, split: str = "train"):
    """Sequences (n, seq_len, input_dim) in [-1, 1] and integer labels."""
    n = task.n_train if split == "train" else task.n_test
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = rng.integers(0, task.n_classes, n)
    freqs = (1.0 + labels) / (2.0 * task.seq_len) * 2.0  # cycles per step, below Nyquist
    t = np.arange(task.seq_len)
    phase = rng.uniform(0, 2 * np.pi, (n, 1, task.input_dim))
    amp = rng.uniform(0.5, 1.0, (n, 1, task.input_dim))
    x = amp * np.sin(2 * np.pi * freqs[:, None, None] * t[None, :, None] + phase)
    x = x + task.noise * rng.standard_normal(x.shape)
    return np.clip(x / (1.0 + task.noise), -1.0, 1.0), labels


class Quantizers:
    """Weight and converter quantizers for one (adc_bits, x_bits) setting."""

    def __init__(self, cfg: TrainConfig, hidden: int):
        self.cfg = cfg
        adc = AdcConfig(make_activation("sigmoid"), n_bits=cfg.adc_bits)
        d = design(adc)
        self.s = d.scale
        self.levels = np.asarray(d.levels_units, dtype=float)
        self.n_bits = cfg.adc_bits
        gate_scale = np.repeat([self.s, self.s, self.s / 2, self.s], hidden)
        self.gate_scale = gate_scale  # activation-input units per MAC unit, per column
        self.w_step = gate_scale * cfg.x_max  # real weight per integer level
        self.qmax = 2 ** (cfg.quant_bits - 1) - 1

    def weight_ints(self, W) -> np.ndarray:
        if self.cfg.quant_bits == 2:
            thr = TERNARY_THRESHOLD * np.mean(np.abs(W))
            return np.where(W > thr, 1, np.where(W < -thr, -1, 0)).astype(np.int64)
        q = np.sign(W) * np.floor(np.abs(W) / self.w_step + 0.5)
        return np.clip(q, -self.qmax, self.qmax).astype(np.int64)

    def weights(self, W):
        """Quantized real weights and the straight-through pass mask."""
        q = self.weight_ints(W) * self.w_step
        mask = np.abs(W) <= (self.qmax + 0.5) * self.w_step
        return q, mask

    def inputs(self, x):
        m = self.cfg.x_max
        return np.clip(np.floor(x * m + 0.5), -m, m) / m

    def gates(self, a, H):
        """Converter output for pre-activations a (B, 4H) and its STE derivative."""
        units = a / self.gate_scale
        codes = (self.levels[None, None, :] < units[..., None]).sum(-1)
        n = 2**self.n_bits
        z = (codes + 1) / n
        z[:, 2 * H:3 * H] = 2 * z[:, 2 * H:3 * H] - 1
        inside = (units >= self.levels[0]) & (units <= self.levels[-1])
        return z, inside


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ToyNet:
    W: np.ndarray  # (input_dim + hidden, 4 * hidden) shadow weights, gates [i|f|g|o]
    V: np.ndarray  # (hidden, classes)
    input_dim: int
    hidden_dim: int

    @classmethod
    def init(cls, input_dim, hidden_dim, n_classes, rng, w_scale=1.0):
        W = rng.normal(0.0, w_scale, (input_dim + hidden_dim, 4 * hidden_dim))
        V = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, n_classes))
        return cls(W, V, input_dim, hidden_dim)

    def params(self):
        return {"W": self.W, "V": self.V}


def forward_hwat(net: ToyNet, x, cfg: TrainConfig, rng=None, quant: Quantizers | None = None,
                 noise_sigma: float | None = None):
    """Run the sequence batch x (B, T, D); returns (logits, cache).

    Gate outputs are converter levels plus N(0, noise_sigma); a fresh noise
    draw is taken on every call.
    """
    H = net.hidden_dim
    sigma = cfg.noise_sigma if noise_sigma is None else noise_sigma
    if cfg.quantize:
        quant = quant or Quantizers(cfg, H)
        Wq, mask = quant.weights(net.W)
        x = quant.inputs(x)
    else:
        Wq, mask = net.W, np.ones(net.W.shape, dtype=bool)
    B, T, _ = x.shape
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        inp = np.concatenate([x[:, t], h], axis=1)
        a = inp @ Wq
        if cfg.quantize:
            z, inside = quant.gates(a, H)
            dz = np.empty_like(a)
            sg = _sig(a[:, :2 * H]), _sig(a[:, 3 * H:])
            dz[:, :2 * H] = sg[0] * (1 - sg[0])
            dz[:, 3 * H:] = sg[1] * (1 - sg[1])
            dz[:, 2 * H:3 * H] = 1 - np.tanh(a[:, 2 * H:3 * H]) ** 2
            dz *= inside
        else:
            z = np.empty_like(a)
            z[:, :2 * H] = _sig(a[:, :2 * H])
            z[:, 3 * H:] = _sig(a[:, 3 * H:])
            z[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
            dz = z.copy()
            dz[:, :2 * H] = z[:, :2 * H] * (1 - z[:, :2 * H])
            dz[:, 3 * H:] = z[:, 3 * H:] * (1 - z[:, 3 * H:])
            dz[:, 2 * H:3 * H] = 1 - z[:, 2 * H:3 * H] ** 2
        if sigma > 0:
            if rng is None:
                raise ValueError("noise needs an rng")
            z = z + rng.normal(0.0, sigma, z.shape)
        i, f, g, o = (z[:, k * H:(k + 1) * H] for k in range(4))
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_real = o * tc
        h = quant.inputs(h_real) if cfg.quantize else h_real
        steps.append((inp, z, dz, c_prev, tc))
    logits = h @ net.V
    return logits, {"steps": steps, "h": h, "Wq": Wq, "mask": mask}


def softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300))
    d = p.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return loss, d / len(labels)


def backward_hwat(net: ToyNet, cache, dlogits) -> dict:
    """Loss gradients for W and V (BPTT; straight-through across quantizers)."""
    H, D = net.hidden_dim, net.input_dim
    Wq = cache["Wq"]
    gV = cache["h"].T @ dlogits
    dh = dlogits @ net.V.T
    dc_next = np.zeros_like(dh)
    gW = np.zeros_like(Wq)
    for inp, z, dz, c_prev, tc in reversed(cache["steps"]):
        i, f, g, o = (z[:, k * H:(k + 1) * H] for k in range(4))
        do = dh * tc
        dc = dc_next + dh * o * (1 - tc**2)
        dgates = np.concatenate([dc * g, dc * c_prev, dc * i, do], axis=1)
        da = dgates * dz
        dc_next = dc * f
        gW += inp.T @ da
        dh = (da @ Wq.T)[:, D:]
    return {"W": gW * cache["mask"], "V": gV}


class Adam:
    def __init__(self, params: dict, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            # descent direction applied as an additive update to the shadow weights
            params[k] += -self.lr * mh / (np.sqrt(vh) + self.eps)


def evaluate(net: ToyNet, x, y, cfg: TrainConfig, noise_sigma: float = 0.0, seed: int = 0, draws: int = 1) -> float:
    quant = Quantizers(cfg, net.hidden_dim) if cfg.quantize else None
    rng = np.random.default_rng([seed, 7])
    accs = []
    for _ in range(draws if noise_sigma > 0 else 1):
        logits, _ = forward_hwat(net, x, cfg, rng, quant, noise_sigma)
        accs.append(np.mean(np.argmax(logits, axis=1) == y))
    return float(np.mean(accs))


@dataclass
class TrainResult:
    net: ToyNet
    history: list  # (epoch, loss, clean_acc, noisy_acc)
    clean_acc: float
    noisy_acc: float


def train_toy(cfg: TrainConfig, eval_sigma: float = 0.05, log_every: int = 1) -> TrainResult:
    """Train on the synthetic task; separate RNG streams for init, data order and noise."""
    task = cfg.task
    xtr, ytr = make_task(task, cfg.seed, "train")
    xte, yte = make_task(task, cfg.seed, "test")
    init_rng = np.random.default_rng([cfg.seed, 11])
    order_rng = np.random.default_rng([cfg.seed, 12])
    noise_rng = np.random.default_rng([cfg.seed, 13])
    quant = Quantizers(cfg, cfg.hidden_dim) if cfg.quantize else None
    w_scale = float(np.mean(quant.w_step)) if quant is not None else 0.5
    net = ToyNet.init(task.input_dim, cfg.hidden_dim, task.n_classes, init_rng, w_scale)
    params = net.params()
    opt = Adam(params, lr=cfg.lr)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        frac = (epoch - 1) / max(cfg.epochs - 1, 1)
        opt.lr = cfg.lr * (cfg.lr_final + (1 - cfg.lr_final) * 0.5 * (1 + np.cos(np.pi * frac)))
        perm = order_rng.permutation(len(ytr))
        losses = []
        for b in range(0, len(perm), cfg.batch):
            idx = perm[b:b + cfg.batch]
            logits, cache = forward_hwat(net, xtr[idx], cfg, noise_rng, quant)
            loss, dl = softmax_xent(logits, ytr[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", cfg.to_dict())
            opt.step(params, backward_hwat(net, cache, dl))
            losses.append(loss)
        if epoch % log_every == 0 or epoch == cfg.epochs:
            clean = evaluate(net, xte, yte, cfg, 0.0, cfg.seed)
            noisy = evaluate(net, xte, yte, cfg, eval_sigma, cfg.seed, cfg.eval_noise_draws)
            history.append((epoch, float(np.mean(losses)), clean, noisy))
    clean = evaluate(net, xte, yte, cfg, 0.0, cfg.seed)
    noisy = evaluate(net, xte, yte, cfg, eval_sigma, cfg.seed, cfg.eval_noise_draws)
    return TrainResult(net, history, clean, noisy)


def export_for_macro(net: ToyNet, cfg: TrainConfig) -> dict:
    """Integer weights ready for the macro, with their scale constants.

    Shadow weights beyond the representable range are clipped; the count is
    reported and a warning raised.
    """
    quant = Quantizers(cfg, net.hidden_dim)
    w_int = quant.weight_ints(net.W)
    clipped = int(np.sum(np.abs(net.W) > (quant.qmax + 0.5) * quant.w_step)) if cfg.quant_bits > 2 else 0
    if clipped:
        warnings.warn(f"{clipped} weights clipped to +/-{quant.qmax}", stacklevel=2)
    scheme = scheme_for(cfg.quant_bits)
    if not np.array_equal(decode_matrix(encode_matrix(w_int, scheme), scheme), w_int):
        raise TrainingError("exported weights do not survive the cell encoding")
    fmax = np.abs(net.V).max()
    fc_scale = float(fmax / (2 ** (FC_BITS - 1) - 1)) if fmax > 0 else 1.0
    fc_int = np.clip(np.floor(np.abs(net.V) / fc_scale + 0.5) * np.sign(net.V), -127, 127).astype(np.int64)
    return {
        "input_dim": net.input_dim,
        "hidden_dim": net.hidden_dim,
        "n_w": cfg.quant_bits,
        "x_bits": cfg.x_bits,
        "adc_bits": cfg.adc_bits,
        "w_cat": w_int.tolist(),
        "fc": fc_int.tolist(),
        "w_step": [float(v) for v in quant.w_step],
        "fc_scale": fc_scale,
        "zero_fraction": float(np.mean(w_int == 0)),
        "clipped": clipped,
    }


def dump_export(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def model_from_export(doc: dict) -> LstmModel:
    return LstmModel(np.array(doc["w_cat"]), np.array(doc["fc"]), doc["input_dim"], doc["hidden_dim"],
                     doc["n_w"], doc["x_bits"])


def export_from_model(model: LstmModel, ref: dict) -> dict:
    """Rebuild an export document from an imported model (round-trip check)."""
    out = dict(ref)
    out["w_cat"] = model.w_cat.tolist()
    out["fc"] = model.fc.tolist()
    return out


def features_to_pulses(x, x_bits: int) -> np.ndarray:
    m = 2 ** (x_bits - 1) - 1
    return np.clip(np.floor(np.asarray(x) * m + 0.5), -m, m).astype(np.int64)
