"""Two-process state estimator: an attentive latent-variable regressor that
reproduces wheel-odometry dynamics, stacked with a hierarchical residual
regressor that corrects it toward fused high-fidelity labels. Both decoders
predict offsets around physics priors, so the untrained model falls back to
the force-model rollout exactly.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import autodiff as ad
from ..physics import RobotState, WheelCmd, diff_drive_step, skid_steer_step
from .layers import MLP, CrossAttention, GaussianHead, GaussianParamHead, Linear, SelfAttention

STATE_DIM = 6
CTX_IN_LOW = 2  # (wr, wl)
CTX_IN_HIGH = 5  # (wr, wl, fx, fy, mz)


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    depth: int = 2
    latent_dim: int = 16
    key_dim: int = 32
    var_floor: float = 1e-6
    window: int = 32
    min_context: int = 4
    fallback_sigma: float = 0.1
    deterministic_inference: bool = True


@dataclass(frozen=True)
class GaussianPrediction:
    """Per-state mean and diagonal variance."""

    mu: np.ndarray
    var: np.ndarray

    def sigma(self):
        return np.sqrt(self.var)


def fuse(low, res):
    """Combine the two process outputs: means add, variances add."""
    if low.mu.shape != res.mu.shape or low.var.shape != res.var.shape:
        raise ValueError("fuse: prediction shapes must match")
    return GaussianPrediction(mu=low.mu + res.mu, var=low.var + res.var)


def _hidden(sizes_in, width, depth):
    return [sizes_in] + [width] * depth


class LowFidelityProcess:
    """Attentive latent-variable regressor over wheel-rate/odometry context."""

    def __init__(self, cfg, rng):
        w, d = cfg.width, cfg.depth
        pair_in = CTX_IN_LOW + STATE_DIM
        latent_in = CTX_IN_LOW + 1 + STATE_DIM  # wheel rates, dk slot, state
        self.pair_embed = MLP(_hidden(pair_in, w, d), rng)
        self.self_attn = SelfAttention(w, cfg.key_dim, rng)
        self.latent_embed = MLP(_hidden(latent_in, w, d), rng)
        self.latent_trunk = MLP([w, w], rng)
        self.latent_head = GaussianParamHead(w, cfg.latent_dim, rng, cfg.var_floor)
        self.cross = CrossAttention(CTX_IN_LOW, 1, cfg.key_dim, rng)
        dec_in = cfg.key_dim + cfg.latent_dim + w + STATE_DIM
        self.dec_trunk = MLP(_hidden(dec_in, w, d), rng)
        self.dec_head = GaussianHead(w, STATE_DIM, rng, cfg.var_floor)

    def encode_context(self, x_c, y_c):
        """Per-element representations and their mean-pooled summary."""
        pairs = ad.concat([_t(x_c), _t(y_c)])
        reps = self.self_attn(self.pair_embed(pairs))
        return reps, ad.tmean(reps, axis=-2)

    def latent_params(self, elements):
        """Latent Gaussian from a padded element set (…, n, 9)."""
        pooled = ad.tmean(self.latent_embed(_t(elements)), axis=-2)
        if pooled.data.ndim == 1:
            pooled = ad.reshape(pooled, (1, pooled.data.shape[0]))
        return self.latent_head(ad.tanh(self.latent_trunk(pooled)))

    def embed_queries(self, dk):
        return self.cross.embed_queries(_t(dk))

    def attend(self, x_c, reps, queries_embedded):
        return self.cross(_t(x_c), reps, queries_embedded)

    def decode(self, dk_emb, z, attended, prior):
        trunk_in = ad.concat([_t(dk_emb), _t(z), _t(attended), _t(prior)])
        h = ad.tanh(self.dec_trunk(trunk_in))
        return self.dec_head(h, _t(prior))

    def decoder_params(self):
        out = {}
        out.update(self.dec_trunk.params("dec_trunk"))
        out.update(self.dec_head.params("dec_head"))
        return out

    def params(self, prefix):
        out = {}
        out.update(self.pair_embed.params(f"{prefix}.pair_embed"))
        out.update(self.self_attn.params(f"{prefix}.self_attn"))
        out.update(self.latent_embed.params(f"{prefix}.latent_embed"))
        out.update(self.latent_trunk.params(f"{prefix}.latent_trunk"))
        out.update(self.latent_head.params(f"{prefix}.latent_head"))
        out.update(self.cross.params(f"{prefix}.cross"))
        out.update(self.dec_trunk.params(f"{prefix}.dec_trunk"))
        out.update(self.dec_head.params(f"{prefix}.dec_head"))
        return out


class ResidualProcess:
    """Hierarchical residual regressor conditioned on the low-level latent."""

    def __init__(self, cfg, rng):
        w, d = cfg.width, cfg.depth
        latent_in = CTX_IN_HIGH + 1 + STATE_DIM
        self.set_embed = MLP(_hidden(latent_in, w, d), rng)
        self.latent_trunk = MLP([w + cfg.latent_dim, w], rng)
        self.latent_head = GaussianParamHead(w, cfg.latent_dim, rng, cfg.var_floor)
        self.dk_embed = Linear(1, cfg.key_dim, rng)
        dec_in = cfg.key_dim + cfg.latent_dim + STATE_DIM
        self.dec_trunk = MLP(_hidden(dec_in, w, d), rng)
        self.dec_head = GaussianHead(w, STATE_DIM, rng, cfg.var_floor)

    def latent_params(self, elements, z_low):
        pooled = ad.tmean(self.set_embed(_t(elements)), axis=-2)
        if pooled.data.ndim == 1:
            pooled = ad.reshape(pooled, (1, pooled.data.shape[0]))
        trunk_in = ad.concat([pooled, _t(z_low)])
        return self.latent_head(ad.tanh(self.latent_trunk(trunk_in)))

    def decode(self, dk, z_high, rhat):
        dk_emb = ad.tanh(self.dk_embed(_t(dk)))
        trunk_in = ad.concat([dk_emb, _t(z_high), _t(rhat)])
        h = ad.tanh(self.dec_trunk(trunk_in))
        return self.dec_head(h, _t(rhat))

    def params(self, prefix):
        out = {}
        out.update(self.set_embed.params(f"{prefix}.set_embed"))
        out.update(self.latent_trunk.params(f"{prefix}.latent_trunk"))
        out.update(self.latent_head.params(f"{prefix}.latent_head"))
        out.update(self.dk_embed.params(f"{prefix}.dk_embed"))
        out.update(self.dec_trunk.params(f"{prefix}.dec_trunk"))
        out.update(self.dec_head.params(f"{prefix}.dec_head"))
        return out


def _t(x):
    if isinstance(x, ad.Tensor):
        return x
    return ad.Tensor(np.asarray(x, dtype=np.float64))


# padded latent-element builders (numpy; conditioning sets are constants)


def low_context_elements(x_c, y_c):
    """Context role: wheel rates in the input slots, dk slot zeroed."""
    x_c = np.asarray(x_c, dtype=np.float64)
    y_c = np.asarray(y_c, dtype=np.float64)
    pad = np.zeros(x_c.shape[:-1] + (1,))
    return np.concatenate([x_c, pad, y_c], axis=-1)


def low_target_elements(dk, y_t):
    """Target role: dk in its slot, wheel-rate slots zeroed."""
    dk = np.asarray(dk, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64)
    pad = np.zeros(dk.shape[:-1] + (CTX_IN_LOW,))
    return np.concatenate([pad, dk, y_t], axis=-1)


def res_context_elements(x_high, mu_low):
    x_high = np.asarray(x_high, dtype=np.float64)
    mu_low = np.asarray(mu_low, dtype=np.float64)
    pad = np.zeros(x_high.shape[:-1] + (1,))
    return np.concatenate([x_high, pad, mu_low], axis=-1)


def res_target_elements(dk, labels):
    dk = np.asarray(dk, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pad = np.zeros(dk.shape[:-1] + (CTX_IN_HIGH,))
    return np.concatenate([pad, dk, labels], axis=-1)


@dataclass
class InferenceInputs:
    """Everything one prediction step needs, assembled by the transition
    tracker: the context window plus the physics-chain heads and the next
    interval's wheel command and duration."""

    ctx_x: np.ndarray  # (W, 2) wheel rates
    ctx_y: np.ndarray  # (W, 6) odometry-chain states
    ctx_dk: np.ndarray  # (W,)
    ctx_xhigh: np.ndarray  # (W, 5) wheel rates + body forces
    ctx_prior: np.ndarray  # (W, 6) odometry-chain next states
    low_head: RobotState
    g2_head: tuple  # (RobotState, BodyVelocity)
    wr: float
    wl: float
    dk: float


@dataclass
class InferResult:
    pred: GaussianPrediction  # fused, pre-calibration
    sigma_cal: np.ndarray  # calibrated standard deviation
    fallback: bool
    low_pred: GaussianPrediction
    res_pred: GaussianPrediction
    g1_next: RobotState
    g2_next: RobotState


class MultiFidelityEstimator:
    """Owns both processes, their parameters, and the frozen decoder copy."""

    def __init__(self, cfg=None, kin_params=None, seed=0):
        from ..physics import KinematicParams

        self.cfg = cfg or ModelConfig()
        self.kin = kin_params or KinematicParams()
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))
        self.low = LowFidelityProcess(self.cfg, init_rng)
        self.res = ResidualProcess(self.cfg, init_rng)
        self.params = ad.ParameterSet()
        for name, t in self.low.params("low").items():
            self.params.add(name, t)
        for name, t in self.res.params("res").items():
            self.params.add(name, t)
        # frozen copy of the low decoder; parameters deliberately unregistered
        frozen_rng = np.random.default_rng(0)
        self._frozen_trunk = MLP(
            _hidden(self.cfg.key_dim + self.cfg.latent_dim + self.cfg.width + STATE_DIM,
                    self.cfg.width, self.cfg.depth),
            frozen_rng,
        )
        self._frozen_head = GaussianHead(self.cfg.width, STATE_DIM, frozen_rng, self.cfg.var_floor)
        self.frozen_version = -1
        self.frozen_sync_count = 0
        self.sample_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A]))
        self.sync_frozen()

    # ----- frozen decoder -----

    def _frozen_param_map(self):
        out = {}
        out.update(self._frozen_trunk.params("dec_trunk"))
        out.update(self._frozen_head.params("dec_head"))
        return out

    def sync_frozen(self):
        """Copy the live low decoder into the frozen one (idempotent)."""
        live = self.low.decoder_params()
        for name, t in self._frozen_param_map().items():
            t.data[...] = live[name].data
        self.frozen_version = self.params.version
        self.frozen_sync_count += 1

    def frozen_arrays(self):
        return {f"frozen.{n}": t.data for n, t in self._frozen_param_map().items()}

    def load_frozen_arrays(self, arrays):
        for name, t in self._frozen_param_map().items():
            t.data[...] = arrays[f"frozen.{name}"]

    def decode_low_frozen(self, dk_emb, z, attended, prior):
        """Frozen-decoder means for constant (detached) conditioning arrays.

        Evaluated in plain numpy: this path backs residual labels and
        conditioning outputs, which never carry gradients.
        """
        from ..backend import kernels as K

        h = np.concatenate([dk_emb, z, attended, prior], axis=-1)
        for layer in self._frozen_trunk.layers:
            h = h @ layer.w.data + layer.b.data
            np.tanh(h, out=h)  # trunk ends with the same activation
        off = h @ self._frozen_head.offset.w.data + self._frozen_head.offset.b.data
        raw = h @ self._frozen_head.raw_var.w.data + self._frozen_head.raw_var.b.data
        raw = np.ascontiguousarray(raw)
        var = np.empty_like(raw)
        K.softplus_fwd(raw.reshape(-1), var.reshape(-1))
        var += self.cfg.var_floor
        return prior + off, var

    # ----- latent sampling -----

    def sample_latent(self, mu, var, deterministic, rng=None):
        if deterministic:
            return mu
        return ad.reparameterized_sample(mu, var, rng or self.sample_rng)

    # ----- inference -----

    def physics_fallback(self, inputs):
        cmd = WheelCmd(inputs.wr, inputs.wl)
        g1_next = diff_drive_step(inputs.low_head, cmd, self.kin, inputs.dk)
        g2_next, _ = skid_steer_step(
            inputs.g2_head[0], inputs.g2_head[1], cmd, self.kin, inputs.dk
        )
        mu = np.array(g1_next.as_tuple())
        var = np.full(STATE_DIM, self.cfg.fallback_sigma**2)
        pred = GaussianPrediction(mu=mu, var=var)
        return InferResult(
            pred=pred,
            sigma_cal=pred.sigma(),
            fallback=True,
            low_pred=pred,
            res_pred=GaussianPrediction(np.zeros(STATE_DIM), np.zeros(STATE_DIM)),
            g1_next=g1_next,
            g2_next=g2_next,
        )

    def infer(self, inputs, quantile=None, deterministic=None):
        """One full prediction step over the current context window.

        Falls back to the kinematic prior (flagged) until the window holds
        at least `min_context` transitions. The returned prediction is
        pre-calibration; `sigma_cal` carries the quantile-scaled width.
        """
        if deterministic is None:
            deterministic = self.cfg.deterministic_inference
        n_ctx = inputs.ctx_x.shape[0]
        if n_ctx < self.cfg.min_context:
            out = self.physics_fallback(inputs)
            if quantile is not None:
                out = replace(out, sigma_cal=out.pred.sigma() * np.asarray(quantile))
            return out

        cmd = WheelCmd(inputs.wr, inputs.wl)
        g1_next = diff_drive_step(inputs.low_head, cmd, self.kin, inputs.dk)
        g2_next, _ = skid_steer_step(
            inputs.g2_head[0], inputs.g2_head[1], cmd, self.kin, inputs.dk
        )

        reps, _ = self.low.encode_context(inputs.ctx_x, inputs.ctx_y)
        mu_z, var_z = self.low.latent_params(
            low_context_elements(inputs.ctx_x, inputs.ctx_y)
        )
        z = self.sample_latent(mu_z, var_z, deterministic)

        dk_query = np.array([[inputs.dk]])
        q_emb = self.low.embed_queries(dk_query)
        attended = self.low.attend(inputs.ctx_x, reps, q_emb)
        prior = np.array(g1_next.as_tuple())[None, :]
        mu_low_t, var_low_t = self.low.decode(q_emb, z, attended, prior)
        mu_low = mu_low_t.data[0]
        var_low = var_low_t.data[0]

        # live-decoder means for each context element condition the residual
        ctx_q = self.low.embed_queries(inputs.ctx_dk[:, None])
        ctx_att = self.low.attend(inputs.ctx_x, reps, ctx_q)
        z_tile = np.ascontiguousarray(
            np.broadcast_to(z.data.reshape(1, -1), (n_ctx, self.cfg.latent_dim))
        )
        mu_ctx_t, _ = self.low.decode(
            _t(ctx_q.data), _t(z_tile), _t(ctx_att.data), inputs.ctx_prior
        )
        res_ctx = res_context_elements(inputs.ctx_xhigh, mu_ctx_t.data)
        mu_zh, var_zh = self.res.latent_params(res_ctx, z)
        z_high = self.sample_latent(mu_zh, var_zh, deterministic)

        rhat = np.array(g2_next.as_tuple()) - mu_low
        mu_res_t, var_res_t = self.res.decode(
            np.array([[inputs.dk]]), z_high, rhat[None, :]
        )
        low_pred = GaussianPrediction(mu=mu_low, var=var_low)
        res_pred = GaussianPrediction(mu=mu_res_t.data[0], var=var_res_t.data[0])
        pred = fuse(low_pred, res_pred)
        q = np.ones(STATE_DIM) if quantile is None else np.asarray(quantile)
        return InferResult(
            pred=pred,
            sigma_cal=pred.sigma() * q,
            fallback=False,
            low_pred=low_pred,
            res_pred=res_pred,
            g1_next=g1_next,
            g2_next=g2_next,
        )

    # ----- persistence -----

    def save(self, path):
        ad.save_parameters(path, self.params, extra=self.frozen_arrays())

    def load(self, path):
        arrays, version = ad.load_arrays(path)
        frozen = {k: v for k, v in arrays.items() if k.startswith("frozen.")}
        live = {k: v for k, v in arrays.items() if not k.startswith("frozen.")}
        self.params.load_arrays(live)
        self.params.version = version
        self.load_frozen_arrays(frozen)
