"""Online hybrid learning loop: replay storage, dual variational losses,
periodic training with a frozen-decoder schedule, and conformal refits,
interleaved with per-tick inference over a streaming dataset.
"""

import json
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .conformal import CalibrationSet, ConformalConfig, QuantileVector, apply_quantile, fit_quantile, score
from .model.estimator import (
    InferenceInputs,
    MultiFidelityEstimator,
    low_context_elements,
    low_target_elements,
    res_context_elements,
    res_target_elements,
)
from .physics import (
    BodyVelocity,
    KinematicParams,
    RobotState,
    WheelCmd,
    body_forces,
    body_velocity_from_state,
    diff_drive_step,
    skid_steer_step,
)

PREDICTION_COLUMNS = (
    ["t"]
    + [f"mu_{c}" for c in "x y th vx vy w".split()]
    + [f"sigma_{c}" for c in "x y th vx vy w".split()]
    + [f"qa_{c}" for c in "x y th vx vy w".split()]
)


@dataclass(frozen=True)
class TrainConfig:
    capacity: int = 10_000
    low_batch: int = 128
    high_batch: int = 128
    train_period: int = 10  # loop iterations between training phases
    sync_period: int = 10  # training phases between frozen-decoder syncs
    hifi_period: int = 5  # iterations between high-buffer appends
    warmup: int = 1000  # physics-labeled transitions to prefill
    checkpoint_period: int = 2000
    lr: float = 1e-3
    weight_decay: float = 5e-7

    def __post_init__(self):
        for name in ("capacity", "low_batch", "high_batch", "train_period",
                     "sync_period", "hifi_period", "checkpoint_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")


class TransitionStore:
    """Bounded FIFO of transitions, stored columnarly and addressed by a
    monotone sequence number; eviction is strictly oldest-first."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.next_seq = 0
        c = capacity
        self.t = np.zeros(c)
        self.wr = np.zeros(c)
        self.wl = np.zeros(c)
        self.dk = np.zeros(c)
        self.x_low = np.zeros((c, 6))
        self.x1_low = np.zeros((c, 6))
        self.forces = np.zeros((c, 3))
        self.x1_g2 = np.zeros((c, 6))
        self.label = np.zeros((c, 6))

    def __len__(self):
        return min(self.next_seq, self.capacity)

    @property
    def oldest_seq(self):
        return max(0, self.next_seq - self.capacity)

    def append(self, t, wr, wl, dk, x_low, x1_low, forces, x1_g2, label):
        i = self.next_seq % self.capacity
        self.t[i] = t
        self.wr[i] = wr
        self.wl[i] = wl
        self.dk[i] = dk
        self.x_low[i] = x_low
        self.x1_low[i] = x1_low
        self.forces[i] = forces
        self.x1_g2[i] = x1_g2
        self.label[i] = label
        seq = self.next_seq
        self.next_seq += 1
        return seq

    def rows(self, seqs):
        return np.asarray(seqs) % self.capacity


class TransitionTracker:
    """Advances the physics chains over incoming sensor ticks, records
    transitions into the store and keeps the live context window.

    The force-model prior is pose-anchored at the odometry chain each step
    while its body velocities persist as integrator state: a free-running
    force-model chain double-integrates encoder noise through the undamped
    yaw dynamics and drifts far faster than wheel odometry itself.
    """

    def __init__(self, store, kin, window, initial_state=None):
        self.store = store
        self.kin = kin
        init = initial_state or RobotState()
        self.low_head = init
        body = body_velocity_from_state(init)
        self.g2_vel = (body.u, body.v, init.w)
        self.live = deque(maxlen=window)

    def _g2_anchor(self):
        """Force-model step inputs: odometry-chain pose, persistent body
        velocities."""
        u, v, w = self.g2_vel
        th = self.low_head.th
        import math

        c, s = math.cos(th), math.sin(th)
        state = RobotState(
            x=self.low_head.x, y=self.low_head.y, th=th,
            vx=c * u - s * v, vy=s * u + c * v, w=w,
        )
        return state, BodyVelocity(u, v)

    def advance(self, t, wr, wl, dk, label=None):
        """Ingest one tick; `label=None` uses the force-model rollout as
        its own label (physics-only warmup)."""
        cmd = WheelCmd(wr, wl)
        g2_state, g2_body = self._g2_anchor()
        f = body_forces(cmd, g2_body, self.kin)
        g1_next = diff_drive_step(self.low_head, cmd, self.kin, dk)
        g2_next, body_next = skid_steer_step(g2_state, g2_body, cmd, self.kin, dk)
        x1_g2 = np.array(g2_next.as_tuple())
        seq = self.store.append(
            t,
            wr,
            wl,
            dk,
            np.array(self.low_head.as_tuple()),
            np.array(g1_next.as_tuple()),
            np.array([f.fx, f.fy, f.mz]),
            x1_g2,
            x1_g2 if label is None else np.asarray(label, dtype=np.float64),
        )
        self.low_head = g1_next
        self.g2_vel = (body_next.u, body_next.v, g2_next.w)
        self.live.append(seq)
        return seq

    def window_size(self):
        valid = [s for s in self.live if s >= self.store.oldest_seq]
        return len(valid)

    def inference_inputs(self, wr, wl, dk):
        store = self.store
        seqs = [s for s in self.live if s >= store.oldest_seq]
        idx = store.rows(seqs)
        return InferenceInputs(
            ctx_x=np.stack([store.wr[idx], store.wl[idx]], axis=-1),
            ctx_y=store.x_low[idx],
            ctx_dk=store.dk[idx],
            ctx_xhigh=np.concatenate(
                [store.wr[idx, None], store.wl[idx, None], store.forces[idx]], axis=-1
            ),
            ctx_prior=store.x1_low[idx],
            low_head=self.low_head,
            g2_head=self._g2_anchor(),
            wr=wr,
            wl=wl,
            dk=dk,
        )


# ---------------------------------------------------------------------------
# batches


@dataclass
class LowBatch:
    ctx_x: np.ndarray  # (B, W, 2)
    ctx_y: np.ndarray  # (B, W, 6)
    ctx_dk: np.ndarray  # (B, W)
    tgt_dk: np.ndarray  # (B,)
    tgt_y: np.ndarray  # (B, 6)
    tgt_prior: np.ndarray  # (B, 6)


@dataclass
class HighBatch(LowBatch):
    ctx_xhigh: np.ndarray = None  # (B, W, 5)
    ctx_prior: np.ndarray = None  # (B, W, 6)
    tgt_label: np.ndarray = None  # (B, 6)
    tgt_g2: np.ndarray = None  # (B, 6)


def _gather(store, seqs, window, high):
    seqs = np.asarray(seqs)
    ctx_seqs = seqs[:, None] + np.arange(-window, 0)[None, :]
    cidx = store.rows(ctx_seqs)
    tidx = store.rows(seqs)
    base = dict(
        ctx_x=np.stack([store.wr[cidx], store.wl[cidx]], axis=-1),
        ctx_y=store.x_low[cidx],
        ctx_dk=store.dk[cidx],
        tgt_dk=store.dk[tidx],
        tgt_y=store.x1_low[tidx],
        tgt_prior=store.x1_low[tidx],
    )
    if not high:
        return LowBatch(**base)
    return HighBatch(
        **base,
        ctx_xhigh=np.concatenate(
            [store.wr[cidx][..., None], store.wl[cidx][..., None], store.forces[cidx]],
            axis=-1,
        ),
        ctx_prior=store.x1_low[cidx],
        tgt_label=store.label[tidx],
        tgt_g2=store.x1_g2[tidx],
    )


def sample_low_batch(store, batch, window, rng):
    lo = store.oldest_seq + window
    hi = store.next_seq
    if hi <= lo:
        return None
    seqs = rng.integers(lo, hi, size=batch)
    return _gather(store, seqs, window, high=False)


def sample_high_batch(store, high_seqs, batch, window, rng):
    lo = store.oldest_seq + window
    valid = np.array([s for s in high_seqs if s >= lo], dtype=np.int64)
    if valid.size == 0:
        return None
    seqs = valid[rng.integers(0, valid.size, size=batch)]
    return _gather(store, seqs, window, high=True)


# ---------------------------------------------------------------------------
# losses


def elbo_low(model, b, rng, deterministic=False):
    """Negative low-fidelity ELBO: reconstruction NLL of the next odometry
    state plus the KL between target- and context-conditioned latents."""
    B = b.tgt_y.shape[0]
    reps, _ = model.low.encode_context(b.ctx_x, b.ctx_y)
    mu_c, var_c = model.low.latent_params(low_context_elements(b.ctx_x, b.ctx_y))
    elems_t = low_target_elements(b.tgt_dk[:, None, None], b.tgt_y[:, None, :])
    mu_t, var_t = model.low.latent_params(elems_t)
    z = model.sample_latent(mu_t, var_t, deterministic, rng)

    q3 = model.low.embed_queries(b.tgt_dk[:, None, None])
    a3 = model.low.attend(b.ctx_x, reps, q3)
    q_emb = ad.reshape(q3, (B, q3.shape[-1]))
    attended = ad.reshape(a3, (B, a3.shape[-1]))
    mu, var = model.low.decode(q_emb, z, attended, b.tgt_prior)

    recon = ad.gaussian_nll(b.tgt_y, mu, var)
    kl = ad.scale(ad.diag_gaussian_kl(mu_t, var_t, mu_c, var_c), 1.0 / B)
    return ad.add(recon, kl), {"recon_low": recon.item(), "kl_low": kl.item()}


def frozen_reference_means(model, hb, z_low, q_emb, attended, reps):
    """Frozen-decoder means for the high batch: one per target (the residual
    label anchor) and one per context element (the residual conditioning
    outputs). The whole path runs untraced; labels never carry gradients."""
    B, W = hb.ctx_dk.shape
    with ad.pause_tracing():
        mu_t, _ = model.decode_low_frozen(q_emb, z_low, attended, hb.tgt_prior)
        ctx_q = model.low.embed_queries(hb.ctx_dk[..., None])
        ctx_a = model.low.attend(hb.ctx_x, ad.Tensor(reps), ctx_q)
        z_tile = np.ascontiguousarray(
            np.broadcast_to(z_low[:, None, :], (B, W, z_low.shape[-1]))
        )
        mu_c, _ = model.decode_low_frozen(ctx_q.data, z_tile, ctx_a.data, hb.ctx_prior)
    return mu_t, mu_c


def elbo_res(model, hb, rng, deterministic=False):
    """Negative residual ELBO over a high-fidelity batch.

    Residual labels are anchored to the frozen decoder: the true label is
    the fused state minus the frozen mean, the approximate one is the
    force-model rollout minus the frozen mean.
    """
    B = hb.tgt_label.shape[0]
    reps, _ = model.low.encode_context(hb.ctx_x, hb.ctx_y)
    elems_t = low_target_elements(hb.tgt_dk[:, None, None], hb.tgt_y[:, None, :])
    mu_zl, var_zl = model.low.latent_params(elems_t)
    z_low = model.sample_latent(mu_zl, var_zl, deterministic, rng)

    q3 = model.low.embed_queries(hb.tgt_dk[:, None, None])
    a3 = model.low.attend(hb.ctx_x, reps, q3)
    q_emb = ad.reshape(q3, (B, q3.shape[-1]))
    attended = ad.reshape(a3, (B, a3.shape[-1]))

    mu_f_t, mu_f_c = frozen_reference_means(
        model, hb, z_low.data, q_emb.data, attended.data, reps.data
    )
    r_true = hb.tgt_label - mu_f_t
    r_hat = hb.tgt_g2 - mu_f_t

    res_ctx = res_context_elements(hb.ctx_xhigh, mu_f_c)
    res_tgt = res_target_elements(hb.tgt_dk[:, None, None], r_true[:, None, :])
    mu_zt, var_zt = model.res.latent_params(res_tgt, z_low)
    mu_zc, var_zc = model.res.latent_params(res_ctx, z_low)
    z_high = model.sample_latent(mu_zt, var_zt, deterministic, rng)

    mu_r, var_r = model.res.decode(hb.tgt_dk[:, None], z_high, r_hat)
    recon = ad.gaussian_nll(r_true, mu_r, var_r)
    kl = ad.scale(ad.diag_gaussian_kl(mu_zt, var_zt, mu_zc, var_zc), 1.0 / B)
    return ad.add(recon, kl), {"recon_res": recon.item(), "kl_res": kl.item()}


@dataclass
class TrainStats:
    loss: float
    elbo_low: float
    elbo_res: float
    kl_low: float
    kl_res: float
    applied: bool


def train_phase(model, store, high_seqs, tcfg, opt, rng_batch, rng_latent):
    """One joint optimization step over freshly sampled batches; returns
    None when either buffer cannot supply a batch yet."""
    lb = sample_low_batch(store, tcfg.low_batch, model.cfg.window, rng_batch)
    hb = sample_high_batch(store, high_seqs, tcfg.high_batch, model.cfg.window, rng_batch)
    if lb is None or hb is None:
        return None
    with ad.Tape() as tape:
        loss_low, d_low = elbo_low(model, lb, rng_latent)
        loss_res, d_res = elbo_res(model, hb, rng_latent)
        loss = ad.add(loss_low, loss_res)
    grads = ad.backward(tape, loss)
    named = {n: grads[t] for n, t in model.params.items() if t in grads}
    applied = ad.adam_step(model.params, named, opt)
    return TrainStats(
        loss=loss.item(),
        elbo_low=loss_low.item(),
        elbo_res=loss_res.item(),
        kl_low=d_low["kl_low"],
        kl_res=d_res["kl_res"],
        applied=applied,
    )


# ---------------------------------------------------------------------------
# warmup and the full loop


def physics_warmup(store, high_seqs, profile, kin, noise, rates, count, seed, hifi_period):
    """Prefill the replay store from a disturbance-free rollout where the
    force-model rollout doubles as the label: the residual model starts
    from data whose true residual equals its physics-informed estimate."""
    from .simworld import DisturbanceSpec, simulate

    duration = (count + 2) / rates.lofi_hz
    _, frames = simulate(
        profile,
        params=kin,
        disturbance=DisturbanceSpec(kind="none"),
        noise=noise,
        rates=rates,
        seed=seed,
        duration=duration,
    )
    tracker = TransitionTracker(store, kin, window=1)
    for i, fr in enumerate(frames[:count]):
        seq = tracker.advance(fr.t, fr.enc_wr, fr.enc_wl, fr.dk, label=None)
        if (i + 1) % hifi_period == 0:
            high_seqs.append(seq)


@dataclass
class RunResult:
    outdir: str
    n_iterations: int
    n_fallback: int
    n_errors: int
    predictions: np.ndarray  # (N, 19): t, mu x6, sigma x6, qa x6
    latencies_ms: np.ndarray
    losses: list
    prediction_path: str
    losses_path: str
    latency_path: str
    manifest_path: str


def _fmt(x):
    return repr(float(x))


def run_loop(
    frames,
    labels,
    outdir,
    model_cfg=None,
    train_cfg=None,
    conformal_cfg=None,
    kin=None,
    noise=None,
    rates=None,
    warmup_profile=None,
    seed=0,
    manifest_extra=None,
    max_iterations=None,
):
    """Run the full hybrid loop over a recorded sensor stream with fused
    labels; writes predictions/losses/latency logs, checkpoints and a
    manifest into `outdir` and returns the in-memory arrays.

    Iteration i ingests frame i (whose fused label is available the same
    tick), scores the previous prediction for conformal calibration, trains
    on schedule, and then predicts the state at frame i+1 using the next
    tick's wheel rates, which a deployed system knows ahead as commands.
    Any error inside an iteration is logged and the loop continues.
    """
    import os

    from .model.estimator import ModelConfig
    from .simworld import SensorNoiseSpec, SimRates

    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    conformal_cfg = conformal_cfg or ConformalConfig()
    kin = kin or KinematicParams()
    noise = noise or SensorNoiseSpec()
    rates = rates or SimRates()
    if len(frames) < 2:
        raise ValueError("run_loop: need at least two frames")
    if len(frames) != len(labels):
        raise ValueError("run_loop: frames and labels must align")

    os.makedirs(outdir, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    s_model, s_batch, s_latent, s_warm = [int(s.generate_state(1)[0]) for s in ss.spawn(4)]

    model = MultiFidelityEstimator(model_cfg, kin, seed=s_model)
    opt = ad.AdamState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    store = TransitionStore(train_cfg.capacity)
    high_seqs = deque(maxlen=train_cfg.capacity)
    rng_batch = np.random.default_rng(s_batch)
    rng_latent = np.random.default_rng(s_latent)

    if train_cfg.warmup > 0:
        from .simworld import builtin_profiles

        profile = warmup_profile or builtin_profiles(kin)["pulsed-eight"]
        physics_warmup(
            store, high_seqs, profile, kin, noise, rates,
            train_cfg.warmup, s_warm, train_cfg.hifi_period,
        )

    tracker = TransitionTracker(store, kin, model_cfg.window)
    cal = CalibrationSet(dim=6, window=conformal_cfg.window)
    quantile = QuantileVector.identity()

    n = len(frames) - 1
    if max_iterations is not None:
        n = min(n, max_iterations)
    preds = np.zeros((n, 19))
    lat = np.zeros(n)
    losses = []
    n_fallback = 0
    n_errors = 0
    n_phases = 0
    prev_pred = None
    err_path = os.path.join(outdir, "errors.log")

    for i in range(n):
        try:
            fr = frames[i]
            lbl = labels[i]
            label_vec = np.array(lbl.as_tuple())
            seq = tracker.advance(fr.t, fr.enc_wr, fr.enc_wl, fr.dk, label_vec)
            if (seq + 1) % train_cfg.hifi_period == 0:
                high_seqs.append(seq)

            if prev_pred is not None:
                cal.add(score(label_vec, prev_pred))
            if (i + 1) % conformal_cfg.refit_period == 0:
                fitted = fit_quantile(
                    cal, conformal_cfg.alpha, previous=quantile,
                    inflate_factor=conformal_cfg.inflate_factor, iteration=i,
                )
                if fitted is not None:
                    quantile = fitted

            if (i + 1) % train_cfg.train_period == 0:
                stats = train_phase(
                    model, store, high_seqs, train_cfg, opt, rng_batch, rng_latent
                )
                if stats is not None:
                    n_phases += 1
                    losses.append((i, stats))
                    if n_phases % train_cfg.sync_period == 0:
                        model.sync_frozen()

            nxt = frames[i + 1]
            t0 = time.perf_counter()
            result = model.infer(
                tracker.inference_inputs(nxt.enc_wr, nxt.enc_wl, nxt.dk),
                quantile=quantile.q,
            )
            lat[i] = (time.perf_counter() - t0) * 1e3
            if result.fallback:
                n_fallback += 1
            prev_pred = result.pred
            preds[i, 0] = nxt.t
            preds[i, 1:7] = result.pred.mu
            preds[i, 7:13] = result.pred.sigma()
            preds[i, 13:19] = quantile.q

            if (i + 1) % train_cfg.checkpoint_period == 0:
                model.save(os.path.join(outdir, f"checkpoint_{i + 1:06d}.bin"))
        except Exception as e:  # real-time resilience: log and move on
            n_errors += 1
            prev_pred = None
            with open(err_path, "a") as f:
                f.write(f"iteration {i}: {type(e).__name__}: {e}\n")

    model.save(os.path.join(outdir, "checkpoint_final.bin"))

    pred_path = os.path.join(outdir, "predictions.csv")
    with open(pred_path, "w", newline="") as f:
        f.write(",".join(PREDICTION_COLUMNS) + "\n")
        for row in preds:
            f.write(",".join(_fmt(v) for v in row) + "\n")

    lat_path = os.path.join(outdir, "latencies.csv")
    with open(lat_path, "w", newline="") as f:
        f.write("iter,latency_ms\n")
        for i, v in enumerate(lat):
            f.write(f"{i},{_fmt(v)}\n")

    loss_path = os.path.join(outdir, "losses.csv")
    with open(loss_path, "w", newline="") as f:
        f.write("iter,loss,elbo_low,elbo_res,kl_low,kl_res\n")
        for i, s in losses:
            f.write(
                f"{i},{_fmt(s.loss)},{_fmt(s.elbo_low)},{_fmt(s.elbo_res)},"
                f"{_fmt(s.kl_low)},{_fmt(s.kl_res)}\n"
            )

    manifest = {
        "seed": seed,
        "iterations": n,
        "fallback_predictions": n_fallback,
        "errors": n_errors,
        "train_phases": n_phases,
        "frozen_syncs": None,
    }
    manifest["frozen_syncs"] = model.frozen_sync_count
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest_path = os.path.join(outdir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")

    return RunResult(
        outdir=outdir,
        n_iterations=n,
        n_fallback=n_fallback,
        n_errors=n_errors,
        predictions=preds,
        latencies_ms=lat,
        losses=losses,
        prediction_path=pred_path,
        losses_path=loss_path,
        latency_path=lat_path,
        manifest_path=manifest_path,
    )
