"""Minimal dense numerical core: MLPs with layer norm, hand-rolled
reverse-mode gradients, Adam, and unit-sphere normalization.

Everything operates on plain numpy arrays in float32 (tests may feed
float64 to sharpen finite-difference comparisons; the math is dtype
agnostic). Forward passes record the intermediates needed for an exact
backward replay, so gradients are deterministic bit-for-bit given the
same inputs.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LN_EPS = 1e-5

MAGIC = b"PPGS"
FORMAT_VERSION = 1
FILE_KIND_BARE = 0
FILE_KIND_WORLDMODEL = 1


@dataclass(frozen=True)
class LayerSpec:
    width: int
    layer_norm: bool = False
    relu: bool = False


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    layers: tuple[LayerSpec, ...]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].width

    def widths(self) -> list[int]:
        return [self.in_dim] + [l.width for l in self.layers]


def mlp_spec(in_dim, hidden, out_dim, *, hidden_ln=True, hidden_relu=True) -> MlpSpec:
    """Hidden stack of equal treatment plus a bare linear head."""
    layers = [LayerSpec(w, hidden_ln, hidden_relu) for w in hidden]
    layers.append(LayerSpec(out_dim))
    return MlpSpec(in_dim, tuple(layers))


@dataclass
class LayerParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None

    def arrays(self):
        out = [self.W, self.b]
        if self.gamma is not None:
            out += [self.gamma, self.beta]
        return out


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> list[LayerParams]:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    params = []
    fan_in = spec.in_dim
    for layer in spec.layers:
        bound = np.sqrt(6.0 / (fan_in + layer.width))
        W = rng.uniform(-bound, bound, size=(layer.width, fan_in)).astype(np.float32)
        b = np.zeros(layer.width, dtype=np.float32)
        if layer.layer_norm:
            gamma = np.ones(layer.width, dtype=np.float32)
            beta = np.zeros(layer.width, dtype=np.float32)
            params.append(LayerParams(W, b, gamma, beta))
        else:
            params.append(LayerParams(W, b))
        fan_in = layer.width
    return params


def zeros_like_params(params: list[LayerParams]) -> list[LayerParams]:
    return [
        LayerParams(
            np.zeros_like(p.W),
            np.zeros_like(p.b),
            None if p.gamma is None else np.zeros_like(p.gamma),
            None if p.beta is None else np.zeros_like(p.beta),
        )
        for p in params
    ]


def param_count(params: list[LayerParams]) -> int:
    return sum(a.size for p in params for a in p.arrays())


def mlp_forward(spec: MlpSpec, params: list[LayerParams], x: np.ndarray):
    """Forward pass on a (batch, in_dim) matrix. Returns (out, cache)."""
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ValueError(f"expected (*, {spec.in_dim}) input, got {x.shape}")
    cache = []
    h = x
    for layer, p in zip(spec.layers, params):
        u = h @ p.W.T + p.b
        if layer.layer_norm:
            mu = u.mean(axis=1, keepdims=True)
            var = u.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=u.dtype))
            xhat = (u - mu) * inv
            v = xhat * p.gamma + p.beta
        else:
            xhat = inv = None
            v = u
        out = np.maximum(v, 0) if layer.relu else v
        cache.append((h, xhat, inv, v))
        h = out
    return h, cache


def mlp_backward(spec: MlpSpec, params, cache, grad_out: np.ndarray):
    """Backward replay. Returns (param_grads, grad_wrt_input)."""
    grads = zeros_like_params(params)
    g = grad_out
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p = spec.layers[i], params[i]
        h, xhat, inv, v = cache[i]
        if layer.relu:
            g = g * (v > 0)
        if layer.layer_norm:
            grads[i].gamma[...] = (g * xhat).sum(axis=0)
            grads[i].beta[...] = g.sum(axis=0)
            gx = g * p.gamma
            # d/du of (u - mu) * inv with mu, inv per-sample statistics
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            g = inv * (gx - m1 - xhat * m2)
        grads[i].W[...] = g.T @ h
        grads[i].b[...] = g.sum(axis=0)
        g = g @ p.W
    return grads, g


def normalize_to_sphere(v: np.ndarray) -> np.ndarray:
    """Project rows (or a single vector) onto the unit sphere."""
    z, _ = sphere_forward(v)
    return z


def sphere_forward(v: np.ndarray):
    single = v.ndim == 1
    x = v[None, :] if single else v
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector onto the sphere")
    z = x / norms
    if single:
        return z[0], (z, norms)
    return z, (z, norms)


def sphere_backward(cache, grad_z: np.ndarray) -> np.ndarray:
    z, norms = cache
    g = grad_z[None, :] if grad_z.ndim == 1 else grad_z
    proj = (g * z).sum(axis=1, keepdims=True)
    gv = (g - z * proj) / norms
    return gv[0] if grad_z.ndim == 1 else gv


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-5
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-5) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(a) for a in arrays]
    state.v = [np.zeros_like(a) for a in arrays]
    return state


def adam_step(state: AdamState, arrays, grads) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Binary model files
# ---------------------------------------------------------------------------
# Layout (little endian):
#   magic "PPGS" | version u32 | kind u32
#   kind 1 adds: d u32, eps f32, alpha f32, beta f32, obs C,H,W u32 x3, hybrid u8
#   n_networks u32, then per network:
#     n_layers u32, in_dim u32, per layer (width u32, flags u8: bit0 LN, bit1 relu)
#     raw float32 blocks per layer in declaration order: W, b, [gamma, beta]


def _write_network(f, spec: MlpSpec, params) -> None:
    f.write(struct.pack("<II", len(spec.layers), spec.in_dim))
    for layer in spec.layers:
        flags = (1 if layer.layer_norm else 0) | (2 if layer.relu else 0)
        f.write(struct.pack("<IB", layer.width, flags))
    for p in params:
        for a in p.arrays():
            f.write(np.ascontiguousarray(a, dtype=np.float32).tobytes())


def _read_network(f):
    n_layers, in_dim = struct.unpack("<II", f.read(8))
    layers = []
    for _ in range(n_layers):
        width, flags = struct.unpack("<IB", f.read(5))
        layers.append(LayerSpec(width, bool(flags & 1), bool(flags & 2)))
    spec = MlpSpec(in_dim, tuple(layers))
    params = []
    fan_in = in_dim
    for layer in layers:
        def block(shape):
            n = int(np.prod(shape))
            a = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            return a.astype(np.float32)

        W = block((layer.width, fan_in))
        b = block((layer.width,))
        if layer.layer_norm:
            params.append(LayerParams(W, b, block((layer.width,)), block((layer.width,))))
        else:
            params.append(LayerParams(W, b))
        fan_in = layer.width
    return spec, params


def save_networks(path, networks, header: dict | None = None) -> None:
    """Write networks (list of (spec, params)) to the binary model format."""
    with open(path, "wb") as f:
        kind = FILE_KIND_BARE if header is None else FILE_KIND_WORLDMODEL
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, kind))
        if header is not None:
            f.write(
                struct.pack(
                    "<IfffIIIB",
                    header["d"],
                    header["eps"],
                    header["alpha"],
                    header["beta"],
                    *header["obs_shape"],
                    1 if header.get("hybrid", True) else 0,
                )
            )
        f.write(struct.pack("<I", len(networks)))
        for spec, params in networks:
            _write_network(f, spec, params)


def load_networks(path):
    """Read a model file. Returns (networks, header-or-None)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        version, kind = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        header = None
        if kind == FILE_KIND_WORLDMODEL:
            vals = struct.unpack("<IfffIIIB", f.read(29))
            header = {
                "d": vals[0],
                "eps": vals[1],
                "alpha": vals[2],
                "beta": vals[3],
                "obs_shape": (vals[4], vals[5], vals[6]),
                "hybrid": bool(vals[7]),
            }
        (n_networks,) = struct.unpack("<I", f.read(4))
        networks = [_read_network(f) for _ in range(n_networks)]
    return networks, header
