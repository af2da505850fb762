"""Information-maximizing GAN over EIS curves.

Generator maps a meaningful code c (9 dims, standard Gaussian prior) plus
noise z to a (2, 60) normalized spectrum. Discriminator and auxiliary head
Q share a convolutional trunk; Q predicts the mean of a fixed-variance
Gaussian over c, so minimizing its negative log-likelihood maximizes the
variational lower bound on I(c; G(c, z)) up to the constant H(c).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ndgrad as ng
from .eisdata import NormStats

CHECKPOINT_FORMAT = "eisgan-checkpoint-v1"


class GanError(Exception):
    """Configuration or training failure."""


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 9
    noise_dim: int = 16
    channels: int = 2
    length: int = 60
    trunk_widths: tuple[int, ...] = (16, 32, 64, 64)
    gen_widths: tuple[int, ...] = (64, 32, 16)
    gen_base_len: int = 15
    feature_dim: int = 64
    kernel_width: int = 5
    lr_d: float = 4e-4
    lr_g: float = 1e-4
    lr_q: float = 1e-4
    lambda_mi: float = 0.1
    batch_size: int = 32
    epochs: int = 250
    seed: int = 0
    alpha: float = 0.01
    q_sigma: float = 1.0
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.latent_dim < 1 or self.noise_dim < 0:
            raise GanError("latent_dim must be >= 1 and noise_dim >= 0")
        if self.lambda_mi < 0:
            raise GanError("lambda_mi must be nonnegative")
        if min(self.lr_d, self.lr_g, self.lr_q) <= 0:
            raise GanError("learning rates must be positive")
        up = 2 ** (len(self.gen_widths) - 1)
        if self.gen_base_len * up != self.length:
            raise GanError(
                f"generator shape algebra broken: base_len {self.gen_base_len} "
                f"x 2^{len(self.gen_widths) - 1} != length {self.length}")


@dataclass
class Networks:
    """Parameter sets for G, the shared D/Q trunk, and the two heads."""

    config: GanConfig
    g_dense_w: ng.Tensor
    g_dense_b: ng.Tensor
    g_convs: list[ng.ConvKernelBank]
    trunk_convs: list[ng.ConvKernelBank]
    trunk_dense_w: ng.Tensor
    trunk_dense_b: ng.Tensor
    d_head_w: ng.Tensor
    d_head_b: ng.Tensor
    q_head_w: ng.Tensor
    q_head_b: ng.Tensor

    def g_params(self):
        out = [self.g_dense_w, self.g_dense_b]
        for bank in self.g_convs:
            out.extend(bank.params())
        return out

    def trunk_params(self):
        out = []
        for bank in self.trunk_convs:
            out.extend(bank.params())
        out.extend([self.trunk_dense_w, self.trunk_dense_b])
        return out

    def d_params(self):
        return self.trunk_params() + [self.d_head_w, self.d_head_b]

    def q_params(self):
        return [self.q_head_w, self.q_head_b]

    def all_params(self):
        return self.g_params() + self.d_params() + self.q_params()


@dataclass(frozen=True)
class LatentCode:
    c: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.float64))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.float64))
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.z))):
            raise GanError("latent code must be finite")


@dataclass
class TrainReport:
    loss_d: list[float] = field(default_factory=list)
    loss_g: list[float] = field(default_factory=list)
    loss_mi: list[float] = field(default_factory=list)
    grad_norm_d: list[float] = field(default_factory=list)
    grad_norm_g: list[float] = field(default_factory=list)
    grad_norm_mi: list[float] = field(default_factory=list)


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return ng.Tensor(rng.uniform(-bound, bound, size=shape), is_param=True)


def _conv_bank(rng, c_out, c_in, k_w):
    fan_in = c_in * k_w
    return ng.ConvKernelBank(
        kernels=_uniform_init(rng, (c_out, c_in, k_w), fan_in),
        biases=_uniform_init(rng, (c_out,), fan_in))


def init_networks(config: GanConfig, rng: np.random.Generator) -> Networks:
    """Scaled uniform fan-in initialization; deterministic under the rng."""
    k_w = config.kernel_width
    in_dim = config.latent_dim + config.noise_dim

    g_w0 = config.gen_widths[0]
    g_dense_w = _uniform_init(rng, (g_w0 * config.gen_base_len, in_dim), in_dim)
    g_dense_b = _uniform_init(rng, (g_w0 * config.gen_base_len,), in_dim)
    g_convs = []
    widths = list(config.gen_widths) + [config.channels]
    for c_in, c_out in zip(widths[:-1], widths[1:]):
        g_convs.append(_conv_bank(rng, c_out, c_in, k_w))

    trunk_convs = []
    t_widths = [config.channels] + list(config.trunk_widths)
    length = config.length
    for c_in, c_out in zip(t_widths[:-1], t_widths[1:]):
        trunk_convs.append(_conv_bank(rng, c_out, c_in, k_w))
        length //= 2
    flat = config.trunk_widths[-1] * length
    trunk_dense_w = _uniform_init(rng, (config.feature_dim, flat), flat)
    trunk_dense_b = _uniform_init(rng, (config.feature_dim,), flat)
    d_head_w = _uniform_init(rng, (1, config.feature_dim), config.feature_dim)
    d_head_b = _uniform_init(rng, (1,), config.feature_dim)
    q_head_w = _uniform_init(rng, (config.latent_dim, config.feature_dim), config.feature_dim)
    q_head_b = _uniform_init(rng, (config.latent_dim,), config.feature_dim)

    return Networks(config, g_dense_w, g_dense_b, g_convs, trunk_convs,
                    trunk_dense_w, trunk_dense_b, d_head_w, d_head_b,
                    q_head_w, q_head_b)


# ---------------------------------------------------------------------------
# forward passes (record onto the active tape, if any)
# ---------------------------------------------------------------------------

def _forward_g(nets: Networks, code: ng.Tensor) -> ng.Tensor:
    cfg = nets.config
    pad = (cfg.kernel_width - 1) // 2
    batched = code.data.ndim == 2
    batch = code.data.shape[0] if batched else 1
    h = ng.dense(code, nets.g_dense_w, nets.g_dense_b)
    shape = ((batch, cfg.gen_widths[0], cfg.gen_base_len) if batched
             else (cfg.gen_widths[0], cfg.gen_base_len))
    h = ng.leaky_relu(ng.reshape(h, shape), cfg.alpha)
    for i, bank in enumerate(nets.g_convs):
        last = i == len(nets.g_convs) - 1
        if not last:
            h = ng.upsample_nearest(h, 2)
        h = ng.conv1d(h, bank, padding=pad)
        if not last:
            h = ng.leaky_relu(h, cfg.alpha)
    return h


def _forward_trunk(nets: Networks, x: ng.Tensor) -> ng.Tensor:
    cfg = nets.config
    pad = (cfg.kernel_width - 1) // 2
    batched = x.data.ndim == 3
    h = x
    for bank in nets.trunk_convs:
        h = ng.avg_pool1d(ng.leaky_relu(ng.conv1d(h, bank, padding=pad), cfg.alpha), 2)
    flat = int(np.prod(h.data.shape[-2:]))
    shape = (h.data.shape[0], flat) if batched else (flat,)
    h = ng.dense(ng.reshape(h, shape), nets.trunk_dense_w, nets.trunk_dense_b)
    return ng.leaky_relu(h, cfg.alpha)


def _d_logit(nets: Networks, features: ng.Tensor) -> ng.Tensor:
    return ng.dense(features, nets.d_head_w, nets.d_head_b)


def _q_mean(nets: Networks, features: ng.Tensor) -> ng.Tensor:
    return ng.dense(features, nets.q_head_w, nets.q_head_b)


def generate(nets: Networks, code: LatentCode) -> np.ndarray:
    """Normalized-space EIS array of shape (channels, length)."""
    cfg = nets.config
    if code.c.shape != (cfg.latent_dim,) or code.z.shape != (cfg.noise_dim,):
        raise GanError(
            f"code dims {code.c.shape}/{code.z.shape} do not match config "
            f"({cfg.latent_dim}/{cfg.noise_dim})")
    inp = ng.Tensor(np.concatenate([code.c, code.z]))
    return _forward_g(nets, inp).data


def extract_latents(nets: Networks, curve_array: np.ndarray) -> np.ndarray:
    """c* = Q(D_trunk(x*)) for a normalized (channels, length) curve."""
    cfg = nets.config
    arr = np.asarray(curve_array, dtype=np.float64)
    if arr.shape != (cfg.channels, cfg.length):
        raise GanError(f"curve shape {arr.shape} != ({cfg.channels}, {cfg.length})")
    features = _forward_trunk(nets, ng.Tensor(arr))
    return _q_mean(nets, features).data


def latent_sweep(nets: Networks, dim_index: int, grid=None) -> list[np.ndarray]:
    """Generated curves as one code dimension moves over grid, others at 0, z=0."""
    cfg = nets.config
    if not 0 <= dim_index < cfg.latent_dim:
        raise GanError(f"dim_index {dim_index} out of range")
    if grid is None:
        grid = np.linspace(-2.0, 2.0, 9)
    out = []
    for value in grid:
        c = np.zeros(cfg.latent_dim)
        c[dim_index] = value
        out.append(generate(nets, LatentCode(c, np.zeros(cfg.noise_dim))))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class Optimizers:
    opt_d: ng.AdamP
    opt_g: ng.AdamP
    opt_q: ng.AdamP

    @staticmethod
    def build(nets: Networks) -> "Optimizers":
        cfg = nets.config
        return Optimizers(
            opt_d=ng.AdamP(nets.d_params(), lr=cfg.lr_d),
            opt_g=ng.AdamP(nets.g_params(), lr=cfg.lr_g),
            opt_q=ng.AdamP(nets.g_params() + nets.trunk_params() + nets.q_params(),
                           lr=cfg.lr_q))


def _sample_codes(cfg: GanConfig, batch: int, rng) -> np.ndarray:
    return rng.standard_normal((batch, cfg.latent_dim + cfg.noise_dim))


def train_step(nets: Networks, real_batch: np.ndarray, opts: Optimizers,
               rng: np.random.Generator) -> dict:
    """One adversarial + mutual-information step.

    Sub-updates: (1) discriminator on real vs fresh fakes, (2) generator via
    the non-saturating loss, (3) generator and Q head jointly on the scaled
    code negative log-likelihood (the constant code entropy is dropped).
    """
    cfg = nets.config
    batch = real_batch.shape[0]

    # (1) discriminator
    fake = _forward_g(nets, ng.Tensor(_sample_codes(cfg, batch, rng))).data
    with ng.Tape() as tape:
        logit_real = _d_logit(nets, _forward_trunk(nets, ng.Tensor(real_batch)))
        logit_fake = _d_logit(nets, _forward_trunk(nets, ng.Tensor(fake)))
        loss_d = ng.add(ng.bce_logit_loss(logit_real, True),
                        ng.bce_logit_loss(logit_fake, False))
        grads = ng.backward(tape, loss_d, opts.opt_d.params)
    grads, norm_d = ng.clip_global_norm(grads, cfg.grad_clip)
    opts.opt_d.step(grads)

    # (2) generator, non-saturating
    with ng.Tape() as tape:
        x_g = _forward_g(nets, ng.Tensor(_sample_codes(cfg, batch, rng)))
        loss_g = ng.bce_logit_loss(_d_logit(nets, _forward_trunk(nets, x_g)), True)
        grads = ng.backward(tape, loss_g, opts.opt_g.params)
    grads, norm_g = ng.clip_global_norm(grads, cfg.grad_clip)
    opts.opt_g.step(grads)

    # (3) mutual-information surrogate: G and Q jointly
    codes = _sample_codes(cfg, batch, rng)
    with ng.Tape() as tape:
        x_g = _forward_g(nets, ng.Tensor(codes))
        q_mean = _q_mean(nets, _forward_trunk(nets, x_g))
        loss_mi = ng.scale(
            ng.gaussian_nll(q_mean, codes[:, :cfg.latent_dim], cfg.q_sigma),
            cfg.lambda_mi)
        grads = ng.backward(tape, loss_mi, opts.opt_q.params)
    grads, norm_mi = ng.clip_global_norm(grads, cfg.grad_clip)
    opts.opt_q.step(grads)

    losses = {"loss_d": float(loss_d.data), "loss_g": float(loss_g.data),
              "loss_mi": float(loss_mi.data), "grad_norm_d": norm_d,
              "grad_norm_g": norm_g, "grad_norm_mi": norm_mi}
    for name, value in losses.items():
        if not np.isfinite(value):
            raise GanError(f"non-finite {name} in training step")
    return losses


def train(real_curves: np.ndarray, config: GanConfig) -> tuple[Networks, TrainReport]:
    """Full training loop over normalized (N, channels, length) curves."""
    data = np.asarray(real_curves, dtype=np.float64)
    if data.ndim != 3 or data.shape[1:] != (config.channels, config.length):
        raise GanError(f"training data shape {data.shape} incompatible with config")
    rng = np.random.default_rng(config.seed)
    nets = init_networks(config, rng)
    opts = Optimizers.build(nets)
    report = TrainReport()
    n = len(data)
    batch = min(config.batch_size, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(6)
        steps = 0
        for start in range(0, n - batch + 1, batch):
            real = data[order[start:start + batch]]
            losses = train_step(nets, real, opts, rng)
            sums += [losses[k] for k in ("loss_d", "loss_g", "loss_mi",
                                         "grad_norm_d", "grad_norm_g", "grad_norm_mi")]
            steps += 1
        means = sums / max(steps, 1)
        report.loss_d.append(means[0])
        report.loss_g.append(means[1])
        report.loss_mi.append(means[2])
        report.grad_norm_d.append(means[3])
        report.grad_norm_g.append(means[4])
        report.grad_norm_mi.append(means[5])
    return nets, report


# ---------------------------------------------------------------------------
# latent selection
# ---------------------------------------------------------------------------

def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return np.nan
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


@dataclass(frozen=True)
class LatentSelection:
    order: tuple[int, ...]
    top2: tuple[int, int]
    aligned: np.ndarray
    flipped: tuple[bool, ...]
    correlations: tuple[float, ...]


def align_and_select(latents: np.ndarray, capacities: np.ndarray) -> LatentSelection:
    """Rank code dims by |corr| with capacity; flip so each decreases with cycle.

    Constant dims have undefined correlation and rank last. The aligned
    matrix has every dimension sign-flipped when its trend over cycles is
    increasing, so the selected traces decrease with cycle.
    """
    lat = np.asarray(latents, dtype=float)
    cap = np.asarray(capacities, dtype=float).ravel()
    if lat.ndim != 2 or len(lat) != len(cap):
        raise GanError(f"latents {lat.shape} and capacities {cap.shape} misaligned")
    if len(cap) < 3:
        raise GanError("need at least 3 cycles for correlation ranking")
    n_dims = lat.shape[1]
    cycles = np.arange(len(cap), dtype=float)
    corrs = np.array([_pearson(lat[:, j], cap) for j in range(n_dims)])
    rank_key = np.where(np.isnan(corrs), -1.0, np.abs(corrs))
    order = tuple(int(i) for i in np.argsort(-rank_key, kind="stable"))

    aligned = lat.copy()
    flipped = []
    for j in range(n_dims):
        trend = _pearson(lat[:, j], cycles)
        flip = bool(not np.isnan(trend) and trend > 0)
        if flip:
            aligned[:, j] = -aligned[:, j]
        flipped.append(flip)
    return LatentSelection(order=order, top2=(order[0], order[1]),
                           aligned=aligned, flipped=tuple(flipped),
                           correlations=tuple(float(c) for c in corrs))


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, nets: Networks, stats: NormStats) -> None:
    """Dump config, every parameter array, and NormStats; round-trips bit-exactly."""
    cfg = asdict(nets.config)
    cfg["trunk_widths"] = list(cfg["trunk_widths"])
    cfg["gen_widths"] = list(cfg["gen_widths"])
    header = json.dumps({"format": CHECKPOINT_FORMAT, "config": cfg,
                         "norm_stats": asdict(stats)})
    arrays = {f"p{i:03d}": p.data for i, p in enumerate(nets.all_params())}
    np.savez(path, header=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[Networks, NormStats]:
    with np.load(path) as blob:
        header = json.loads(bytes(blob["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise GanError(f"unknown checkpoint format {header.get('format')!r}")
        cfg_dict = header["config"]
        cfg_dict["trunk_widths"] = tuple(cfg_dict["trunk_widths"])
        cfg_dict["gen_widths"] = tuple(cfg_dict["gen_widths"])
        config = GanConfig(**cfg_dict)
        nets = init_networks(config, np.random.default_rng(0))
        for i, p in enumerate(nets.all_params()):
            saved = blob[f"p{i:03d}"]
            if saved.shape != p.data.shape:
                raise GanError(f"checkpoint parameter {i} shape mismatch")
            p.data = saved.astype(np.float64)
        stats = NormStats(**header["norm_stats"])
    return nets, stats
