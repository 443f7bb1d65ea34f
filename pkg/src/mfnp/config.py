"""Flat key-value run configuration.

Grammar: one `section.key = value` per line; `#` starts a comment; blank
lines ignored. Values are scalars, booleans (`true`/`false`), strings, or
comma-separated 6-vectors. Unknown keys are rejected; missing keys take
the documented defaults. The config hash is the sha256 of the canonical
(sorted, normalized) effective key-value listing, so identical effective
configs hash identically regardless of file layout.
"""

import hashlib

from .conformal import ConformalConfig
from .learner import TrainConfig
from .model.estimator import ModelConfig
from .physics import KinematicParams
from .simworld import DisturbanceSpec, SensorNoiseSpec, SimRates
from .ukf import UkfConfig


class ConfigError(ValueError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


def _vec6(s):
    parts = [p for p in s.replace(",", " ").split() if p]
    vals = tuple(float(p) for p in parts)
    if len(vals) == 1:
        return vals * 6
    if len(vals) != 6:
        raise ConfigError(f"expected 1 or 6 numbers, got {len(vals)}")
    return vals


# key -> (parser, default)
KNOWN_KEYS = {
    "sim.profile": (str, "pulsed-eight"),
    "sim.seed": (int, 0),
    "sim.duration": (float, 102.0),
    "sim.lofi_hz": (float, 50.0),
    "sim.hifi_divisor": (int, 5),
    "sim.jitter": (float, 0.2),
    "noise.encoder_sigma": (float, 0.05),
    "noise.imu_sigma": (float, 0.01),
    "noise.imu_bias_walk": (float, 0.001),
    "noise.hifi_pos_sigma": (float, 0.01),
    "noise.hifi_heading_sigma": (float, 0.005),
    "disturbance.kind": (str, "ou"),
    "disturbance.rate": (_vec6, (0.5,) * 6),
    "disturbance.sigma": (_vec6, (0.004, 0.004, 0.001, 0.01, 0.01, 0.002)),
    "kin.mass": (float, 10.7),
    "kin.wheel_radius": (float, 0.034),
    "kin.chassis_width": (float, 0.288),
    "kin.yaw_inertia": (float, 4.35),
    "kin.traction_gain": (float, 15.0),
    "kin.slip_gain": (float, 11.5),
    "ukf.alpha": (float, 0.1),
    "ukf.beta": (float, 2.0),
    "ukf.kappa": (float, 0.0),
    "ukf.q_diag": (_vec6, (1e-4,) * 6),
    "model.width": (int, 64),
    "model.depth": (int, 2),
    "model.latent_dim": (int, 16),
    "model.key_dim": (int, 32),
    "model.var_floor": (float, 1e-6),
    "model.window": (int, 32),
    "model.min_context": (int, 4),
    "model.fallback_sigma": (float, 0.1),
    "model.deterministic_inference": (_bool, True),
    "train.capacity": (int, 10_000),
    "train.low_batch": (int, 128),
    "train.high_batch": (int, 128),
    "train.train_period": (int, 10),
    "train.sync_period": (int, 10),
    "train.hifi_period": (int, 5),
    "train.warmup": (int, 1000),
    "train.checkpoint_period": (int, 2000),
    "train.lr": (float, 1e-3),
    "train.weight_decay": (float, 5e-7),
    "conformal.alpha": (float, 0.1),
    "conformal.window": (int, 500),
    "conformal.refit_period": (int, 100),
    "conformal.inflate_factor": (float, 10.0),
    "run.seed": (int, 0),
    "run.max_iterations": (int, 0),  # 0 means every available frame
}


class RunConfig:
    """Effective configuration: defaults overlaid with file entries."""

    def __init__(self, values=None):
        self.values = {k: d for k, (_, d) in KNOWN_KEYS.items()}
        if values:
            for k, v in values.items():
                if k not in KNOWN_KEYS:
                    raise ConfigError(f"unknown config key: {k}")
                self.values[k] = v

    @staticmethod
    def parse(text, source="<config>"):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown config key: {key}")
            parser, _ = KNOWN_KEYS[key]
            try:
                values[key] = parser(val)
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
        return RunConfig(values)

    @staticmethod
    def load(path):
        with open(path) as f:
            return RunConfig.parse(f.read(), source=path)

    def __getitem__(self, key):
        return self.values[key]

    def canonical_text(self):
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    # ----- typed views -----

    def sim_rates(self):
        return SimRates(
            lofi_hz=self["sim.lofi_hz"],
            hifi_divisor=self["sim.hifi_divisor"],
            jitter=self["sim.jitter"],
        )

    def noise(self):
        return SensorNoiseSpec(
            encoder_sigma=self["noise.encoder_sigma"],
            imu_sigma=self["noise.imu_sigma"],
            imu_bias_walk=self["noise.imu_bias_walk"],
            hifi_pos_sigma=self["noise.hifi_pos_sigma"],
            hifi_heading_sigma=self["noise.hifi_heading_sigma"],
        )

    def disturbance(self):
        return DisturbanceSpec(
            kind=self["disturbance.kind"],
            rate=self["disturbance.rate"],
            sigma=self["disturbance.sigma"],
        )

    def kin(self):
        return KinematicParams(
            mass=self["kin.mass"],
            wheel_radius=self["kin.wheel_radius"],
            chassis_width=self["kin.chassis_width"],
            yaw_inertia=self["kin.yaw_inertia"],
            traction_gain=self["kin.traction_gain"],
            slip_gain=self["kin.slip_gain"],
        )

    def ukf(self):
        return UkfConfig(
            alpha=self["ukf.alpha"],
            beta=self["ukf.beta"],
            kappa=self["ukf.kappa"],
            q_diag=self["ukf.q_diag"],
        )

    def model_cfg(self):
        return ModelConfig(
            width=self["model.width"],
            depth=self["model.depth"],
            latent_dim=self["model.latent_dim"],
            key_dim=self["model.key_dim"],
            var_floor=self["model.var_floor"],
            window=self["model.window"],
            min_context=self["model.min_context"],
            fallback_sigma=self["model.fallback_sigma"],
            deterministic_inference=self["model.deterministic_inference"],
        )

    def train_cfg(self):
        return TrainConfig(
            capacity=self["train.capacity"],
            low_batch=self["train.low_batch"],
            high_batch=self["train.high_batch"],
            train_period=self["train.train_period"],
            sync_period=self["train.sync_period"],
            hifi_period=self["train.hifi_period"],
            warmup=self["train.warmup"],
            checkpoint_period=self["train.checkpoint_period"],
            lr=self["train.lr"],
            weight_decay=self["train.weight_decay"],
        )

    def conformal_cfg(self):
        return ConformalConfig(
            alpha=self["conformal.alpha"],
            window=self["conformal.window"],
            refit_period=self["conformal.refit_period"],
            inflate_factor=self["conformal.inflate_factor"],
        )
