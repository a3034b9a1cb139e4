"""Latent world model: encoder, hybrid forward model, inverse model.

The encoder maps a symbolic observation to a unit vector in d dimensions.
The forward model predicts the next embedding from (embedding, one-hot
action) plus a context observation from the same level, which lets the
encoder keep only local information (agent position) while the forward
model reads static structure (walls, digits, rocks) off the context. The
low-capacity inverse model classifies the action between two consecutive
embeddings; its cross-entropy term is what keeps the embedding from
collapsing to a point.

The three networks are trained jointly by Adam on

    total = alpha * forward_mse + beta * inverse_ce + margin_hinge

with the margin hinge mean(max(0, 1 - ||z' - z||^2 / eps^2)) pushing
consecutive embeddings at least eps apart so that the planner can
reidentify states at distance < eps/2.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .seeding import rng as make_rng

# Observation channel 0 carries cell codes; the network sees them as
# one-hot planes (9 kinds) plus the agent and goal masks.
KIND_CODES = (0, 1, 2, 11, 12, 13, 14, 15, 16)
_KIND_INDEX = np.full(17, -1, dtype=np.int64)
for _i, _c in enumerate(KIND_CODES):
    _KIND_INDEX[_c] = _i
NUM_PLANES = len(KIND_CODES) + 2

NUM_ACTIONS = 5
_ACTION_EYE = np.eye(NUM_ACTIONS, dtype=np.float32)


@dataclass(frozen=True)
class WorldModelConfig:
    d: int = 16
    eps: float = 0.1
    alpha: float = 10.0
    beta: float = 1.0
    hybrid: bool = True
    encoder_hidden: tuple = (256, 256)
    forward_hidden: tuple = (256, 256, 256)
    inverse_hidden: tuple = (32,)


def obs_to_vec(obs: np.ndarray) -> np.ndarray:
    """Flatten an observation into one-hot cell planes + agent/goal masks."""
    c, h, w = obs.shape
    planes = np.zeros((NUM_PLANES, h, w), dtype=np.float32)
    kind = _KIND_INDEX[obs[0].astype(np.int64)]
    rows, cols = np.indices((h, w))
    planes[kind, rows, cols] = 1.0
    planes[-2] = obs[1]
    planes[-1] = obs[2]
    return planes.reshape(-1)


def obs_dim(obs_shape) -> int:
    _, h, w = obs_shape
    return NUM_PLANES * h * w


class WorldModel:
    """Parameter container plus batched inference for all three networks."""

    def __init__(self, obs_shape, config: WorldModelConfig = WorldModelConfig(),
                 seed: int = 0, _init: bool = True):
        self.obs_shape = tuple(obs_shape)
        self.cfg = config
        d = config.d
        in_dim = obs_dim(obs_shape)
        fwd_in = d + NUM_ACTIONS + (in_dim if config.hybrid else 0)
        self.enc_spec = nn.mlp_spec(in_dim, config.encoder_hidden, d)
        self.fwd_spec = nn.mlp_spec(fwd_in, config.forward_hidden, d)
        self.inv_spec = nn.mlp_spec(2 * d, config.inverse_hidden, NUM_ACTIONS)
        if _init:
            r = make_rng(seed, "init")
            self.enc_params = nn.init_mlp(self.enc_spec, r)
            self.fwd_params = nn.init_mlp(self.fwd_spec, r)
            self.inv_params = nn.init_mlp(self.inv_spec, r)

    # -- parameter plumbing ------------------------------------------------

    def arrays(self) -> list:
        return [
            a
            for params in (self.enc_params, self.fwd_params, self.inv_params)
            for p in params
            for a in p.arrays()
        ]

    @property
    def eps(self) -> float:
        return self.cfg.eps

    # -- inference -----------------------------------------------------------

    def encode_mat(self, x: np.ndarray) -> np.ndarray:
        raw, _ = nn.mlp_forward(self.enc_spec, self.enc_params, x)
        return nn.normalize_to_sphere(raw)

    def encode(self, obs: np.ndarray) -> np.ndarray:
        return self.encode_mat(obs_to_vec(obs)[None, :])[0]

    def predict_batch(self, z: np.ndarray, actions, context_obs: np.ndarray) -> np.ndarray:
        """Next embeddings for rows of z under the given actions, with a
        single context observation shared across the batch."""
        z = np.asarray(z, dtype=np.float32)
        acts = _ACTION_EYE[np.asarray(actions, dtype=np.int64)]
        za = np.concatenate([z, acts], axis=1)
        p0 = self.fwd_params[0]
        split = za.shape[1]
        # The context block of the first layer is constant across the batch;
        # folding it into the bias avoids tiling the context vector.
        pre = p0.b.astype(np.float32)
        if self.cfg.hybrid:
            ctx = obs_to_vec(context_obs)
            pre = pre + p0.W[:, split:] @ ctx
        u = za @ p0.W[:, :split].T + pre
        h = self._apply_post(self.fwd_spec.layers[0], p0, u)
        for layer, p in zip(self.fwd_spec.layers[1:], self.fwd_params[1:]):
            u = h @ p.W.T + p.b
            h = self._apply_post(layer, p, u)
        return nn.normalize_to_sphere(h)

    @staticmethod
    def _apply_post(layer, p, u):
        if layer.layer_norm:
            mu = u.mean(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(u.var(axis=1, keepdims=True) + np.float32(nn.LN_EPS))
            u = (u - mu) * inv * p.gamma + p.beta
        return np.maximum(u, 0) if layer.relu else u

    def predict(self, z, action, context_obs) -> np.ndarray:
        return self.predict_batch(np.asarray(z)[None, :], [int(action)], context_obs)[0]

    def inverse_logits(self, z_t: np.ndarray, z_t1: np.ndarray) -> np.ndarray:
        x = np.concatenate([z_t, z_t1], axis=1).astype(np.float32)
        logits, _ = nn.mlp_forward(self.inv_spec, self.inv_params, x)
        return logits

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "d": self.cfg.d,
            "eps": self.cfg.eps,
            "alpha": self.cfg.alpha,
            "beta": self.cfg.beta,
            "obs_shape": self.obs_shape,
            "hybrid": self.cfg.hybrid,
        }
        nn.save_networks(
            path,
            [
                (self.enc_spec, self.enc_params),
                (self.fwd_spec, self.fwd_params),
                (self.inv_spec, self.inv_params),
            ],
            header,
        )

    @classmethod
    def load(cls, path) -> "WorldModel":
        networks, header = nn.load_networks(path)
        if header is None or len(networks) != 3:
            raise ValueError(f"{path}: not a world-model checkpoint")
        (enc_spec, enc_params), (fwd_spec, fwd_params), (inv_spec, inv_params) = networks
        cfg = WorldModelConfig(
            d=header["d"],
            eps=header["eps"],
            alpha=header["alpha"],
            beta=header["beta"],
            hybrid=header["hybrid"],
            encoder_hidden=tuple(l.width for l in enc_spec.layers[:-1]),
            forward_hidden=tuple(l.width for l in fwd_spec.layers[:-1]),
            inverse_hidden=tuple(l.width for l in inv_spec.layers[:-1]),
        )
        model = cls(header["obs_shape"], cfg, _init=False)
        model.enc_spec, model.enc_params = enc_spec, enc_params
        model.fwd_spec, model.fwd_params = fwd_spec, fwd_params
        model.inv_spec, model.inv_params = inv_spec, inv_params
        return model


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _forward_pass(model: WorldModel, x_h, actions, x_h1, x_c):
    enc_h_raw, enc_h_cache = nn.mlp_forward(model.enc_spec, model.enc_params, x_h)
    z_h, sph_h = nn.sphere_forward(enc_h_raw)
    enc_h1_raw, enc_h1_cache = nn.mlp_forward(model.enc_spec, model.enc_params, x_h1)
    z_h1, sph_h1 = nn.sphere_forward(enc_h1_raw)

    acts = _ACTION_EYE[actions]
    if model.cfg.hybrid:
        f_in = np.concatenate([z_h, acts, x_c], axis=1)
    else:
        f_in = np.concatenate([z_h, acts], axis=1)
    pred_raw, fwd_cache = nn.mlp_forward(model.fwd_spec, model.fwd_params, f_in)
    pred, sph_p = nn.sphere_forward(pred_raw)

    inv_in = np.concatenate([z_h, z_h1], axis=1)
    logits, inv_cache = nn.mlp_forward(model.inv_spec, model.inv_params, inv_in)

    return {
        "z_h": z_h, "sph_h": sph_h, "enc_h_cache": enc_h_cache,
        "z_h1": z_h1, "sph_h1": sph_h1, "enc_h1_cache": enc_h1_cache,
        "pred": pred, "sph_p": sph_p, "fwd_cache": fwd_cache,
        "logits": logits, "inv_cache": inv_cache,
    }


def _loss_terms(model, fw, actions):
    b = actions.shape[0]
    diff = fw["pred"] - fw["z_h1"]
    l_fw = float((diff * diff).sum(axis=1).mean())

    logits = fw["logits"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp_true = shifted[np.arange(b), actions] - logz
    l_ce = float(-logp_true.mean())

    mdiff = fw["z_h1"] - fw["z_h"]
    msq = (mdiff * mdiff).sum(axis=1)
    eps2 = model.cfg.eps ** 2
    hinge = np.maximum(0.0, 1.0 - msq / eps2)
    l_margin = float(hinge.mean())

    total = model.cfg.alpha * l_fw + model.cfg.beta * l_ce + l_margin
    extras = {"diff": diff, "shifted": shifted, "logz": logz, "mdiff": mdiff,
              "hinge": hinge, "eps2": eps2}
    comps = {"l_fw": l_fw, "l_ce": l_ce, "l_margin": l_margin, "l_total": total}
    return comps, extras


def loss_components(model: WorldModel, x_h, actions, x_h1, x_c) -> dict:
    fw = _forward_pass(model, x_h, actions, x_h1, x_c)
    comps, _ = _loss_terms(model, fw, actions)
    return comps


def loss_forward(model, x_h, actions, x_h1, x_c) -> float:
    return loss_components(model, x_h, actions, x_h1, x_c)["l_fw"]


def loss_inverse(model, x_h, actions, x_h1, x_c) -> float:
    return loss_components(model, x_h, actions, x_h1, x_c)["l_ce"]


def loss_margin(model, x_h, actions, x_h1, x_c) -> float:
    return loss_components(model, x_h, actions, x_h1, x_c)["l_margin"]


def loss_total(model, x_h, actions, x_h1, x_c) -> float:
    return loss_components(model, x_h, actions, x_h1, x_c)["l_total"]


def loss_and_grads(model: WorldModel, x_h, actions, x_h1, x_c):
    """Loss components and gradients for every parameter array, aligned
    with model.arrays()."""
    actions = np.asarray(actions, dtype=np.int64)
    b = actions.shape[0]
    fw = _forward_pass(model, x_h, actions, x_h1, x_c)
    comps, ex = _loss_terms(model, fw, actions)
    alpha, beta = model.cfg.alpha, model.cfg.beta
    dtype = fw["pred"].dtype

    d_pred = (alpha * 2.0 / b) * ex["diff"]
    d_zh1 = (-alpha * 2.0 / b) * ex["diff"]

    probs = np.exp(ex["shifted"]) / np.exp(ex["shifted"]).sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[np.arange(b), actions] -= 1.0
    d_logits *= beta / b

    active = (ex["hinge"] > 0).astype(dtype)[:, None]
    margin_grad = (2.0 / (ex["eps2"] * b)) * ex["mdiff"] * active
    d_zh1 = d_zh1 - margin_grad
    d_zh = margin_grad.copy()

    g_inv, d_inv_in = nn.mlp_backward(model.inv_spec, model.inv_params,
                                      fw["inv_cache"], d_logits.astype(dtype))
    d = model.cfg.d
    d_zh = d_zh + d_inv_in[:, :d]
    d_zh1 = d_zh1 + d_inv_in[:, d:]

    d_pred_raw = nn.sphere_backward(fw["sph_p"], d_pred)
    g_fwd, d_fin = nn.mlp_backward(model.fwd_spec, model.fwd_params,
                                   fw["fwd_cache"], d_pred_raw)
    d_zh = d_zh + d_fin[:, :d]

    g_enc_h, _ = nn.mlp_backward(model.enc_spec, model.enc_params,
                                 fw["enc_h_cache"],
                                 nn.sphere_backward(fw["sph_h"], d_zh))
    g_enc_h1, _ = nn.mlp_backward(model.enc_spec, model.enc_params,
                                  fw["enc_h1_cache"],
                                  nn.sphere_backward(fw["sph_h1"], d_zh1))

    grads = []
    for ga, gb in zip(g_enc_h, g_enc_h1):
        for a1, a2 in zip(ga.arrays(), gb.arrays()):
            grads.append(a1 + a2)
    for layer in g_fwd:
        grads.extend(layer.arrays())
    for layer in g_inv:
        grads.extend(layer.arrays())
    return comps, grads


# ---------------------------------------------------------------------------
# Training data layout and loop
# ---------------------------------------------------------------------------


@dataclass
class PackedData:
    """Deduplicated observation matrix plus index-based transitions.

    obs_mat stacks the unique observations of all levels; level_offsets and
    level_counts delimit each level's rows so that context observations can
    be resampled per level.
    """

    obs_mat: np.ndarray        # (n_obs, obs_dim) float32
    level_offsets: np.ndarray  # (n_levels,) int64
    level_counts: np.ndarray   # (n_levels,) int64
    h_idx: np.ndarray          # (n_transitions,) int64
    h1_idx: np.ndarray
    actions: np.ndarray        # (n_transitions,) int64
    level_ids: np.ndarray      # (n_transitions,) int64

    @property
    def n_transitions(self) -> int:
        return self.h_idx.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-5
    seed: int = 0


def train(model: WorldModel, data: PackedData, cfg: TrainConfig,
          log=None, after_epoch=None) -> list[dict]:
    """Joint end-to-end training; one-step targets only.

    Per epoch, context observations are resampled uniformly from each
    transition's level and the transition order is reshuffled. after_epoch
    may return a new PackedData (on-policy augmentation) that replaces the
    training set from the next epoch on. Returns per-epoch loss rows.
    """
    opt = nn.adam_init(model.arrays(), lr=cfg.lr, beta1=cfg.adam_beta1,
                       beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    ctx_rng = make_rng(cfg.seed, "context")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        n = data.n_transitions
        ctx_idx = data.level_offsets[data.level_ids] + ctx_rng.integers(
            0, data.level_counts[data.level_ids]
        )
        perm = shuffle_rng.permutation(n)
        sums = {"l_fw": 0.0, "l_ce": 0.0, "l_margin": 0.0, "l_total": 0.0}
        for lo in range(0, n, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            comps, grads = loss_and_grads(
                model,
                data.obs_mat[data.h_idx[sel]],
                data.actions[sel],
                data.obs_mat[data.h1_idx[sel]],
                data.obs_mat[ctx_idx[sel]],
            )
            nn.adam_step(opt, model.arrays(), grads)
            for k in sums:
                sums[k] += comps[k] * len(sel)
        row = {"epoch": epoch, **{k: sums[k] / max(n, 1) for k in sums}}
        history.append(row)
        if log is not None:
            log(row)
        if after_epoch is not None:
            new_data = after_epoch(epoch, model)
            if new_data is not None:
                data = new_data
    return history


def write_loss_log(history, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,L_FW,L_CE,L_margin,L_total\n")
        for row in history:
            f.write(f"{row['epoch']},{row['l_fw']:.8f},{row['l_ce']:.8f},"
                    f"{row['l_margin']:.8f},{row['l_total']:.8f}\n")
