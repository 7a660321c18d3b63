"""Small-scale autoencoder training and post-hoc precision fitting.

Gradients are hand-derived reverse-mode passes through ``FeedforwardNet``.
Data are scaled to ``[-1, 1]`` per coordinate for training and the scaling is
folded back into the first encoder layer and the last decoder layer, so the
returned models act on raw coordinates.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import cKDTree

from .ambient import kmeans, rbf_bandwidths
from .errors import ConfigurationError, TrainingError
from .generator import FeedforwardNet, Generator, Layer, PositiveRbf, _act, fit_pca

OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    step_size: float = 1e-2
    l2_weight: float = 1e-5
    seed: int = 0
    optimizer: str = "adam"

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1 or self.step_size <= 0 or self.l2_weight < 0:
            raise ConfigurationError("batch_size and step_size must be positive, l2_weight >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class Architecture:
    latent_dim: int = 2
    decoder_hidden: list = field(default_factory=lambda: [3])
    encoder_hidden: list = field(default_factory=lambda: [16])
    activation: str = "tanh"
    use_linear_part: bool = True


def net_backward(net, cache, grad_out):
    """Reverse pass. Returns per-layer ``(dW, db)`` and the gradient with respect to the input."""
    grads = []
    g = grad_out
    for layer, (a, _), (_, h_prev) in zip(
        reversed(net.layers), reversed(cache[1:]), reversed(cache[:-1])
    ):
        _, d1, _ = _act(layer.act, a)
        g = g * d1
        grads.append((g.T @ h_prev, g.sum(axis=0)))
        g = g @ layer.weight
    return grads[::-1], g


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _params(net):
    out = []
    for layer in net.layers:
        out.extend([layer.weight, layer.bias])
    return out


@dataclass
class TrainedAutoencoder:
    generator: Generator
    encoder: FeedforwardNet
    losses: np.ndarray
    config: TrainConfig
    init_decoder: FeedforwardNet = None
    init_encoder: FeedforwardNet = None

    def encode(self, x):
        return self.encoder.forward(x)

    def reconstruct(self, x):
        return self.generator.forward(self.encode(x))

    def rmse(self, x):
        r = self.reconstruct(x) - np.atleast_2d(x)
        return float(np.sqrt(np.mean(np.sum(r**2, axis=1))))


def _copy_net(net):
    return FeedforwardNet([Layer(l.weight.copy(), l.bias.copy(), l.act) for l in net.layers])


def train_autoencoder(data, arch=None, cfg=None):
    """Fit encoder and decoder by mini-batch descent on mean squared reconstruction error.

    The decoder is ``f(z) + U diag(sqrt(lambda)) z + b`` with the affine part
    taken from PCA of the data and held fixed; only ``f`` and the encoder learn.
    """
    arch = arch or Architecture()
    cfg = cfg or TrainConfig()
    cfg.validate()
    x = np.asarray(getattr(data, "points", data), dtype=float)
    n, big_d = x.shape
    d = arch.latent_dim
    rng = np.random.default_rng(cfg.seed)

    lo, hi = x.min(axis=0), x.max(axis=0)
    half = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    mid = 0.5 * (hi + lo)
    xs = (x - mid) / half

    pca = fit_pca(x, d)
    lin_a = pca.components * np.sqrt(pca.eigenvalues) if arch.use_linear_part else np.zeros((big_d, d))
    lin_b = pca.mean if arch.use_linear_part else mid
    # fixed affine part expressed in scaled coordinates
    lin_a_s = lin_a / half[:, None]
    lin_b_s = (lin_b - mid) / half

    dec = FeedforwardNet.random([d] + list(arch.decoder_hidden) + [big_d], arch.activation, rng)
    enc = FeedforwardNet.random([big_d] + list(arch.encoder_hidden) + [d], arch.activation, rng)
    init_dec, init_enc = _copy_net(dec), _copy_net(enc)
    params = _params(dec) + _params(enc)
    opt = _Adam(params, cfg.step_size) if cfg.optimizer == "adam" else _Sgd(params, cfg.step_size)

    # divergence is detected from non-finite losses below, not from floating-point warnings
    @np.errstate(over="ignore", invalid="ignore")
    def loss_and_grads(xb):
        m = len(xb)
        ec = enc.forward_cache(xb)
        z = ec[-1][1]
        dc = dec.forward_cache(z)
        xhat = dc[-1][1] + z @ lin_a_s.T + lin_b_s
        r = xhat - xb
        mse = np.sum(r**2) / m
        reg = sum(np.sum(l.weight**2) for l in dec.layers + enc.layers)
        g_out = 2.0 * r / m
        dgrads, g_z = net_backward(dec, dc, g_out)
        g_z = g_z + g_out @ lin_a_s
        egrads, _ = net_backward(enc, ec, g_z)
        grads = []
        for (gw, gb), layer in zip(dgrads + egrads, dec.layers + enc.layers):
            grads.extend([gw + 2.0 * cfg.l2_weight * layer.weight, gb])
        return mse + cfg.l2_weight * reg, mse, grads

    losses = []
    last_finite = None
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            total, _, grads = loss_and_grads(xs[idx])
            if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(
                    f"training diverged in epoch {epoch}; last finite loss {last_finite}", last_finite
                )
            opt.step(params, grads)
        total, _, _ = loss_and_grads(xs)
        if not np.isfinite(total):
            raise TrainingError(f"training diverged after epoch {epoch}; last finite loss {last_finite}",
                                last_finite)
        last_finite = float(total)
        losses.append(last_finite)

    # fold the coordinate scaling into the nets
    dec_layers = [Layer(l.weight.copy(), l.bias.copy(), l.act) for l in dec.layers]
    last = dec_layers[-1]
    dec_layers[-1] = Layer(last.weight * half[:, None], last.bias * half, last.act)
    enc_layers = [Layer(l.weight.copy(), l.bias.copy(), l.act) for l in enc.layers]
    first = enc_layers[0]
    enc_layers[0] = Layer(first.weight / half[None, :], first.bias - first.weight @ (mid / half), first.act)
    decoder = FeedforwardNet(dec_layers)
    encoder = FeedforwardNet(enc_layers)
    if arch.use_linear_part:
        gen = Generator(decoder, pca.components, pca.eigenvalues, pca.mean, use_linear_part=True)
    else:
        gen = Generator(decoder, offset=mid, use_linear_part=False)
    return TrainedAutoencoder(gen, encoder, np.asarray(losses), cfg, init_dec, init_enc)


def residual_variances(codes, residuals, k=10):
    """Per-code variance estimate: squared residuals averaged over the ``k`` nearest codes."""
    codes = np.atleast_2d(codes)
    sq = np.atleast_2d(residuals) ** 2
    k = min(k, len(codes))
    _, idx = cKDTree(codes).query(codes, k=k)
    idx = idx.reshape(len(codes), -1)
    return sq[idx].mean(axis=1)


def fit_precision_rbf(codes, variances, n_centers, zeta=1e-6, kappa=3.0, seed=0, beta_max=1e6,
                      weight_floor=1e-8):
    """Positive RBF precision with ``1 / (beta + zeta)`` matching the given variances.

    Targets ``1 / variance - zeta`` are clipped to ``[0, beta_max]`` and each
    output dimension is fitted by nonnegative least squares. The default
    ``kappa`` widens the kernels enough for a flat target to be reproduced
    between centers; narrower kernels leave dips in ``beta`` there.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    if n_centers > len(codes):
        raise ConfigurationError(f"K={n_centers} exceeds the number of codes {len(codes)}")
    if variances.shape[0] != len(codes):
        raise ConfigurationError("one variance vector per code required")
    if np.any(variances < 0) or not np.all(np.isfinite(variances)):
        raise ConfigurationError("variances must be finite and nonnegative")
    centers, labels = kmeans(codes, n_centers, seed=seed)
    gamma = rbf_bandwidths(codes, centers, labels, kappa)
    phi = np.exp(-0.5 * gamma[None, :] * np.sum((codes[:, None, :] - centers[None]) ** 2, axis=-1))
    with np.errstate(divide="ignore"):
        target = np.clip(1.0 / variances - zeta, 0.0, beta_max)
    weights = np.empty((variances.shape[1], n_centers))
    for a in range(variances.shape[1]):
        weights[a], _ = nnls(phi, target[:, a])
    return PositiveRbf(centers, gamma, np.maximum(weights, weight_floor), zeta)


def attach_precision(gen, precision):
    """Copy of ``gen`` with ``precision`` as its variance network."""
    return Generator(gen.net, gen.U, gen.eigenvalues, gen.offset, precision, gen.use_linear_part,
                     gen.subspace, out_dim=gen.ambient_dim, in_dim=gen._in)


def config_dict(cfg):
    return asdict(cfg)
