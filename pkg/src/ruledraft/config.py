"""Run configuration: one dataclass, strict JSON round-trip, stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError


@dataclass
class TrainConfig:
    # dimensions
    m_patches: int = 16
    c_feat: int = 32
    d_proj: int = 32
    h_mlp: int = 64
    k_concepts: int = 16
    n_heads: int = 8
    ff_dim: int = 128            # 4 * c_feat at the defaults

    # optimization
    epochs: int = 15
    batch_size: int = 6
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ridge: float = 1e-4          # coefficient on the squared parameter norm

    # losses
    gamma: float = 2.0
    alpha_bal: float = 0.25
    loss_weight_init: tuple = (1.0, 2.0, 1.0, 1.0)   # (rep, concept, task, rule)
    use_rule_loss: bool = True

    # sampling / uncertainty
    t_mc: int = 5
    n_r: int = 5
    k_select: int = 16
    m_cand: int = 64             # 4 * k_select at the defaults
    dropout_rate: float = 0.1
    entropy_variant: str = "printed"

    # logic / decoding
    operator_family: str = "product"
    tau_h: float = 0.5
    harden_training: bool = False
    verify_threshold: float = 0.5
    max_clauses: int = 8

    # reproducibility
    seed: int = 0

    def __post_init__(self):
        positive = ["m_patches", "c_feat", "d_proj", "h_mlp", "k_concepts",
                    "n_heads", "ff_dim", "epochs", "batch_size", "t_mc",
                    "k_select", "m_cand", "max_clauses"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_r < 0:
            raise ConfigurationError("n_r must be >= 0")
        if self.lr < 0 or self.ridge < 0:
            raise ConfigurationError("lr and ridge must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0,1)")
        if self.c_feat % self.n_heads != 0:
            raise ConfigurationError(
                f"c_feat {self.c_feat} not divisible by n_heads {self.n_heads}")
        self.loss_weight_init = tuple(float(v) for v in self.loss_weight_init)
        if len(self.loss_weight_init) != 4 or any(v <= 0 for v in self.loss_weight_init):
            raise ConfigurationError("loss_weight_init needs 4 positive values")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["loss_weight_init"] = list(self.loss_weight_init)
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config is not valid JSON: {e.msg}") from e
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "loss_weight_init" in data:
            data["loss_weight_init"] = tuple(data["loss_weight_init"])
        return cls(**data)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def load_config_file(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return TrainConfig.from_json(f.read())


def save_config_file(cfg: TrainConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.to_json())
