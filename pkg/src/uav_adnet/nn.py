"""Dense VAE family with optional GPS conditioning and copy-crop input links.

Layout (``W`` has shape ``(fan_in, fan_out)``, rows are samples)::

    encoder   [x | gps] -> relu(hidden_1) -> ... -> relu(hidden_k)
    heads     mu = h W_mu + b_mu,  log_var = clip(h W_lv + b_lv, -10, 10)
    sample    z = mu + exp(log_var / 2) * eps
    decoder   [z | gps] -> relu(hidden_k) -> ... -> relu(hidden_1)
    output    x_hat = sigmoid([d | x] W_out + b_out)

``gps`` is present only with ``use_gps``; the raw grid ``x`` is concatenated
into the output layer only with ``use_copy_crop``. Gradients are hand-written
reverse-mode passes over these blocks.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ParseError, ShapeError

LOG_VAR_CLAMP = 10.0
GPS_LEN = 3
_OUT_EPS = np.finfo(np.float64).eps

# name -> (use_gps, use_copy_crop); table order
VARIANTS = {
    "uav-adnet": (True, True),
    "uav-adnet-wo-gps": (False, True),
    "cvae": (True, False),
    "vae": (False, False),
}
DISPLAY_NAMES = {
    "uav-adnet": "UAV-AdNet",
    "uav-adnet-wo-gps": "UAV-AdNet-wo-gps",
    "cvae": "CVAE",
    "vae": "VAE",
}


@dataclass(frozen=True)
class ModelConfig:
    grid_len: int
    use_gps: bool = True
    use_copy_crop: bool = True
    hidden_sizes: tuple[int, ...] = (256, 128)
    latent_dim: int = 32
    kl_weight: float = 1e-3
    gps_len: int = GPS_LEN

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "use_gps", bool(self.use_gps))
        object.__setattr__(self, "use_copy_crop", bool(self.use_copy_crop))
        if not self.use_gps:
            object.__setattr__(self, "gps_len", 0)
        if self.grid_len < 1 or self.latent_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("grid_len, latent_dim and hidden sizes must be positive")
        if self.use_gps and self.gps_len < 1:
            raise ConfigError("gps_len must be positive when use_gps is set")
        if not self.kl_weight >= 0:
            raise ConfigError("kl_weight must be nonnegative")

    @classmethod
    def for_variant(cls, variant: str, grid_len: int, **kwargs) -> "ModelConfig":
        try:
            use_gps, use_cc = VARIANTS[variant.lower()]
        except KeyError:
            raise ConfigError(f"unknown model variant {variant!r}; choose from {', '.join(VARIANTS)}") from None
        return cls(grid_len=grid_len, use_gps=use_gps, use_copy_crop=use_cc, **kwargs)

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.use_gps, self.use_copy_crop):
                return name
        raise AssertionError("unreachable")

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**{k: (tuple(v) if k == "hidden_sizes" else v) for k, v in d.items()})


def layer_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in declaration order."""
    shapes = []
    width = config.grid_len + config.gps_len
    for i, h in enumerate(config.hidden_sizes):
        shapes += [(f"enc.{i}.W", (width, h)), (f"enc.{i}.b", (h,))]
        width = h
    shapes += [("enc.mu.W", (width, config.latent_dim)), ("enc.mu.b", (config.latent_dim,)),
               ("enc.logvar.W", (width, config.latent_dim)), ("enc.logvar.b", (config.latent_dim,))]
    width = config.latent_dim + config.gps_len
    for i, h in enumerate(reversed(config.hidden_sizes)):
        shapes += [(f"dec.{i}.W", (width, h)), (f"dec.{i}.b", (h,))]
        width = h
    if config.use_copy_crop:
        width += config.grid_len
    shapes += [("dec.out.W", (width, config.grid_len)), ("dec.out.b", (config.grid_len,))]
    return shapes


@dataclass(eq=False)
class Network:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = layer_shapes(self.config)
        if [k for k, _ in expected] != list(self.params):
            raise ShapeError("parameter names do not match the configuration")
        for name, shape in expected:
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"non-finite values in {name}", parameter=name)
            self.params[name] = arr

    @classmethod
    def initialize(cls, config: ModelConfig, seed=0) -> "Network":
        """Uniform Glorot weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in layer_shapes(config):
            if name.endswith(".W"):
                a = np.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-a, a, size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(config, params)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "Network":
        return cls(config, {name: np.zeros(shape) for name, shape in layer_shapes(config)})

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _layers(self, prefix, n):
        return [(self.params[f"{prefix}.{i}.W"], self.params[f"{prefix}.{i}.b"]) for i in range(n)]


@dataclass(frozen=True)
class LatentStats:
    mu: np.ndarray
    log_var: np.ndarray


# -- input checks ----------------------------------------------------------------

def _bits(grid) -> np.ndarray:
    return np.asarray(getattr(grid, "bits", grid), dtype=np.float64)


def _as_batch(x, width, what) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} has shape {x.shape}, expected (*, {width})")
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")
    return x


def check_inputs(config: ModelConfig, X, G=None):
    X = _as_batch(X, config.grid_len, "grid input")
    if config.use_gps:
        if G is None:
            raise ConfigError("this model is conditioned on gps; a gps feature is required")
        G = _as_batch(G, config.gps_len, "gps feature")
        if G.shape[0] != X.shape[0]:
            raise ShapeError("grid and gps batches differ in length")
    elif G is not None:
        raise ConfigError("this model takes no gps input")
    return X, G


def _cat(*parts):
    parts = [p for p in parts if p is not None]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


def _relu_stack(h, layers):
    acts = []
    for W, b in layers:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    return h, acts


# -- forward ---------------------------------------------------------------------

def encode_batch(net: Network, X, G=None):
    """Returns ``(mu, log_var, log_var_raw, encoder activations)`` for a batch."""
    cfg = net.config
    a0 = _cat(X, G)
    h, acts = _relu_stack(a0, net._layers("enc", len(cfg.hidden_sizes)))
    mu = h @ net.params["enc.mu.W"] + net.params["enc.mu.b"]
    lv_raw = h @ net.params["enc.logvar.W"] + net.params["enc.logvar.b"]
    lv = np.clip(lv_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    return mu, lv, lv_raw, (a0, acts)


def decode_batch(net: Network, Z, G=None, X=None):
    """Returns ``(x_hat, decoder activations, output-layer input)``."""
    cfg = net.config
    d0 = _cat(Z, G)
    d, acts = _relu_stack(d0, net._layers("dec", len(cfg.hidden_sizes)))
    head_in = _cat(d, X) if cfg.use_copy_crop else d
    logits = head_in @ net.params["dec.out.W"] + net.params["dec.out.b"]
    x_hat = np.clip(expit(logits), _OUT_EPS, 1.0 - _OUT_EPS)
    if not np.isfinite(x_hat).all():
        raise NumericError("non-finite decoder output")
    return x_hat, (d0, acts), head_in


def reconstruct_batch(net: Network, X, G=None) -> np.ndarray:
    """Deterministic reconstruction with ``z = mu``."""
    X, G = check_inputs(net.config, X, G)
    mu, _, _, _ = encode_batch(net, X, G)
    return decode_batch(net, mu, G, X if net.config.use_copy_crop else None)[0]


def encode(net: Network, grid, gps=None) -> LatentStats:
    X, G = check_inputs(net.config, _bits(grid), gps)
    mu, lv, _, _ = encode_batch(net, X, G)
    if not (np.isfinite(mu).all() and np.isfinite(lv).all()):
        raise NumericError("non-finite latent statistics")
    return LatentStats(mu[0], lv[0])


def reparameterize(stats: LatentStats, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    mu = np.asarray(stats.mu, dtype=np.float64)
    log_var = np.clip(np.asarray(stats.log_var, dtype=np.float64), -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * log_var) * eps


def decode(net: Network, z, gps=None, grid_input=None) -> np.ndarray:
    cfg = net.config
    Z = _as_batch(z, cfg.latent_dim, "latent vector")
    if cfg.use_copy_crop:
        if grid_input is None:
            raise ConfigError("copy-crop model needs the grid input at decode time")
        X = _as_batch(_bits(grid_input), cfg.grid_len, "grid input")
    elif grid_input is not None:
        raise ConfigError("model has no copy-crop link; grid_input must not be passed")
    else:
        X = None
    if cfg.use_gps:
        if gps is None:
            raise ConfigError("this model is conditioned on gps; a gps feature is required")
        G = _as_batch(gps, cfg.gps_len, "gps feature")
    elif gps is not None:
        raise ConfigError("this model takes no gps input")
    else:
        G = None
    return decode_batch(net, Z, G, X)[0][0]


# -- loss --------------------------------------------------------------------------

def kl_divergence(mu, log_var) -> np.ndarray:
    mu, log_var = np.asarray(mu, dtype=np.float64), np.asarray(log_var, dtype=np.float64)
    return -0.5 * np.sum(1.0 + log_var - mu**2 - np.exp(log_var), axis=-1)


def loss(x, x_hat, stats: LatentStats, beta: float) -> tuple[float, float, float]:
    """Return ``(total, recon, kl)`` where recon is the per-cell mean squared error."""
    x, x_hat = _bits(x), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"input {x.shape} and reconstruction {x_hat.shape} differ")
    recon = float(np.mean((x - x_hat) ** 2))
    kl = float(kl_divergence(stats.mu, stats.log_var))
    return recon + beta * kl, recon, kl


# -- backward -----------------------------------------------------------------------

def _relu_stack_backward(grad, inp, acts, layers, prefix, grads):
    for i in range(len(layers) - 1, -1, -1):
        grad = grad * (acts[i] > 0)
        below = acts[i - 1] if i > 0 else inp
        grads[f"{prefix}.{i}.W"] = below.T @ grad
        grads[f"{prefix}.{i}.b"] = grad.sum(axis=0)
        grad = grad @ layers[i][0].T
    return grad


def loss_and_grads(net: Network, X, G=None, eps=None, beta=None, recon_weight=1.0):
    """Batch-mean loss and its exact gradient with respect to every parameter.

    ``eps`` is the standard-normal draw shared by forward and backward
    passes; ``beta`` defaults to the config's ``kl_weight``. Returns
    ``(total, recon, kl, grads)`` with batch-mean recon and kl.
    """
    cfg = net.config
    beta = cfg.kl_weight if beta is None else beta
    X, G = check_inputs(cfg, X, G)
    n = X.shape[0]
    if eps is None:
        eps = np.zeros((n, cfg.latent_dim))
    eps = np.asarray(eps, dtype=np.float64).reshape(n, cfg.latent_dim)

    mu, lv, lv_raw, (a0, enc_acts) = encode_batch(net, X, G)
    std = np.exp(0.5 * lv)
    Z = mu + std * eps
    x_hat, (d0, dec_acts), head_in = decode_batch(net, Z, G, X if cfg.use_copy_crop else None)

    recon_i = np.mean((X - x_hat) ** 2, axis=1)
    kl_i = kl_divergence(mu, lv)
    recon, kl = float(recon_i.mean()), float(kl_i.mean())
    total = recon_weight * recon + beta * kl
    if not np.isfinite(total):
        raise NumericError("non-finite loss")

    grads: dict[str, np.ndarray] = {}
    dlogits = recon_weight * (2.0 / (n * cfg.grid_len)) * (x_hat - X) * x_hat * (1.0 - x_hat)
    grads["dec.out.W"] = head_in.T @ dlogits
    grads["dec.out.b"] = dlogits.sum(axis=0)
    dd = (dlogits @ net.params["dec.out.W"].T)[:, : head_in.shape[1] - (cfg.grid_len if cfg.use_copy_crop else 0)]
    dec_layers = net._layers("dec", len(cfg.hidden_sizes))
    dd0 = _relu_stack_backward(dd, d0, dec_acts, dec_layers, "dec", grads)
    dz = dd0[:, : cfg.latent_dim]

    dmu = dz + (beta / n) * mu
    dlv = dz * eps * 0.5 * std + (beta / n) * 0.5 * (np.exp(lv) - 1.0)
    dlv = dlv * ((lv_raw >= -LOG_VAR_CLAMP) & (lv_raw <= LOG_VAR_CLAMP))

    h = enc_acts[-1] if enc_acts else a0
    grads["enc.mu.W"] = h.T @ dmu
    grads["enc.mu.b"] = dmu.sum(axis=0)
    grads["enc.logvar.W"] = h.T @ dlv
    grads["enc.logvar.b"] = dlv.sum(axis=0)
    dh = dmu @ net.params["enc.mu.W"].T + dlv @ net.params["enc.logvar.W"].T
    _relu_stack_backward(dh, a0, enc_acts, net._layers("enc", len(cfg.hidden_sizes)), "enc", grads)

    ordered = {}
    for name, _ in layer_shapes(cfg):
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}", parameter=name)
        ordered[name] = g
    return total, recon, kl, ordered


def draw_eps(seed, n: int, latent_dim: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, latent_dim))


def backward(net: Network, x, gps=None, seed=0, beta=None, recon_weight=1.0) -> dict[str, np.ndarray]:
    """Gradients of the loss for one sample (or a batch), with ``eps`` drawn from ``seed``."""
    X = np.atleast_2d(_bits(x))
    eps = draw_eps(seed, X.shape[0], net.config.latent_dim)
    return loss_and_grads(net, X, gps, eps, beta=beta, recon_weight=recon_weight)[3]


# -- checkpoints ------------------------------------------------------------------------
# magic | u32 header length | JSON header | per tensor:
#   u16 name length | name | u8 ndim | u32 dims | float64 little-endian data

_CKPT_MAGIC = b"ADNETCK1"


def write_checkpoint(fh: BinaryIO, net: Network, extra: dict | None = None, tensors: dict | None = None) -> None:
    header = {"config": net.config.to_dict(), "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(_CKPT_MAGIC)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    all_tensors = list(net.params.items()) + list((tensors or {}).items())
    fh.write(struct.pack("<I", len(all_tensors)))
    for name, arr in all_tensors:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ParseError("truncated checkpoint")
    return data


def read_checkpoint(fh: BinaryIO) -> tuple[Network, dict, dict]:
    """Returns ``(network, extra header dict, extra tensors)``."""
    if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
        raise ParseError("not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
    header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
    config = ModelConfig.from_dict(header["config"])
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    names = [n for n, _ in layer_shapes(config)]
    missing = [n for n in names if n not in tensors]
    if missing:
        raise ParseError(f"checkpoint lacks tensors: {', '.join(missing)}")
    net = Network(config, {n: tensors.pop(n) for n in names})
    return net, header.get("extra", {}), tensors


def save_network(path, net: Network, extra: dict | None = None, tensors: dict | None = None) -> None:
    buf = io.BytesIO()
    write_checkpoint(buf, net, extra, tensors)
    Path(path).write_bytes(buf.getvalue())


def load_network(path) -> tuple[Network, dict, dict]:
    path = Path(path)
    if not path.is_file():
        from .errors import MissingFileError
        raise MissingFileError(path)
    with open(path, "rb") as fh:
        return read_checkpoint(fh)
