"""
The JSON pipeline configuration.

Every key is optional; a missing key takes the default below. For example

    {"lambda": 0.1, "k_train": [6, 8, 12, 20], "epochs": 5}

Files are validated with a marshmallow schema, so a typo in a key name is an
error rather than a silently ignored setting.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

from marshmallow import (
    RAISE,
    Schema,
    ValidationError,
    fields,
    post_load,
    validate,
    validates,
    validates_schema,
)

from deepshells.errors import ConfigError
from deepshells.evaluation import ErrorNorm
from deepshells.filters import Activation, BankShape
from deepshells.grad.adam import TrainerConfig
from deepshells.mesh import TARGET_SQRT_AREA
from deepshells.shells import Schedule, ShellsConfig
from deepshells.shot import ShotConfig

logger = logging.getLogger(__name__)

SHOT_CHANNELS = ShotConfig().descriptor_dim


@dataclass(frozen=True)
class PipelineConfig:
    lam: float = 0.12
    sinkhorn_iters: int = 10
    # None means Schedule.training()
    k_train: Optional[Tuple[int, ...]] = None
    k_test_max: int = 500
    n_eigs: int = 500
    k_conv: int = 200
    n_filters: int = 120
    n_basis: int = 16
    n_layers: int = 1
    T: float = 2e4
    shot_radius: float = 0.05
    sqrt_area: float = TARGET_SQRT_AREA
    error_norm: ErrorNorm = "sqrt_area"
    activation: str = "relu"
    block_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    cost_scale: float = 1.0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pairs_per_step: int = 1
    epochs: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    detach_deformation: bool = False
    converge_final: bool = True
    ablation: bool = False
    init_from_shot: bool = False
    mode_weighting: bool = True
    source: Optional[Path] = field(default=None, compare=False)

    def training_schedule(self) -> Schedule:
        if self.k_train is None:
            return Schedule.training()
        return Schedule.of(self.k_train)

    def testing_schedule(self) -> Schedule:
        return Schedule.testing(
            k_max=self.k_test_max, training=self.training_schedule()
        )

    def shells(self) -> ShellsConfig:
        return ShellsConfig(
            lam=self.lam,
            sinkhorn_iters=self.sinkhorn_iters,
            block_weights=self.block_weights,
            cost_scale=self.cost_scale,
            detach_deformation=self.detach_deformation,
            converge_final=self.converge_final,
            ablation=self.ablation,
            init_from_shot=self.init_from_shot,
            mode_weighting=self.mode_weighting,
        )

    def shot(self) -> ShotConfig:
        return ShotConfig(radius_fraction=self.shot_radius)

    def bank_shapes(self) -> List[BankShape]:
        """
        One shape per layer: the first reads SHOT, later ones read filter outputs.
        """
        activation = Activation.from_name(self.activation)
        inputs = [SHOT_CHANNELS] + [self.n_filters] * (self.n_layers - 1)
        return [
            BankShape(
                L_out=self.n_filters,
                L_in=L_in,
                J=self.n_basis,
                T=self.T,
                activation=activation,
                k_conv=self.k_conv,
            )
            for L_in in inputs
        ]

    def trainer(self) -> TrainerConfig:
        return TrainerConfig(
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            pairs_per_step=self.pairs_per_step,
            epochs=self.epochs,
            seed=self.seed,
            schedule=self.training_schedule(),
            shells=self.shells(),
            checkpoint_every=self.checkpoint_every,
        )


def _positive(**kwargs):
    return validate.Range(min=0, min_inclusive=False, **kwargs)


class PipelineConfigSchema(Schema):
    class Meta:
        unknown = RAISE

    lam = fields.Float(data_key="lambda", load_default=0.12, validate=_positive())
    sinkhorn_iters = fields.Integer(load_default=10, validate=validate.Range(min=1))
    k_train = fields.List(fields.Integer(), load_default=None, allow_none=True)
    k_test_max = fields.Integer(load_default=500, validate=validate.Range(min=2))
    n_eigs = fields.Integer(load_default=500, validate=validate.Range(min=2))
    k_conv = fields.Integer(load_default=200, validate=validate.Range(min=1))
    n_filters = fields.Integer(load_default=120, validate=validate.Range(min=1))
    n_basis = fields.Integer(load_default=16, validate=validate.Range(min=1))
    n_layers = fields.Integer(load_default=1, validate=validate.Range(min=1))
    T = fields.Float(load_default=2e4, validate=_positive())
    shot_radius = fields.Float(load_default=0.05, validate=_positive(max=0.5))
    sqrt_area = fields.Float(load_default=TARGET_SQRT_AREA, validate=_positive())
    error_norm = fields.String(
        load_default="sqrt_area", validate=validate.OneOf(["sqrt_area", "diameter"])
    )
    activation = fields.String(
        load_default="relu", validate=validate.OneOf(["relu", "identity"])
    )
    block_weights = fields.List(
        fields.Float(validate=validate.Range(min=0)),
        load_default=lambda: [1.0, 1.0, 1.0],
        validate=validate.Length(equal=3),
    )
    cost_scale = fields.Float(load_default=1.0, validate=_positive())
    learning_rate = fields.Float(load_default=1e-3, validate=validate.Range(min=0))
    adam_beta1 = fields.Float(
        load_default=0.9, validate=validate.Range(min=0, max=1, max_inclusive=False)
    )
    adam_beta2 = fields.Float(
        load_default=0.999, validate=validate.Range(min=0, max=1, max_inclusive=False)
    )
    adam_eps = fields.Float(load_default=1e-8, validate=_positive())
    pairs_per_step = fields.Integer(load_default=1, validate=validate.Range(min=1))
    epochs = fields.Integer(load_default=1, validate=validate.Range(min=1))
    seed = fields.Integer(load_default=0, validate=validate.Range(min=0))
    checkpoint_every = fields.Integer(load_default=0, validate=validate.Range(min=0))
    detach_deformation = fields.Boolean(load_default=False)
    converge_final = fields.Boolean(load_default=True)
    ablation = fields.Boolean(load_default=False)
    init_from_shot = fields.Boolean(load_default=False)
    mode_weighting = fields.Boolean(load_default=True)

    @validates("k_train")
    def validate_k_train(self, value, **kwargs):
        if value is None:
            return
        if not value:
            raise ValidationError("needs at least one level.")
        if value[0] < 2:
            raise ValidationError("levels must be at least 2.")
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise ValidationError("levels must be strictly ascending.")

    @validates_schema
    def validate_levels(self, data, **kwargs):
        k_train = data.get("k_train") or Schedule.training().k_values
        if data["k_test_max"] < max(k_train):
            raise ValidationError(
                "must be at least the largest training level.", "k_test_max"
            )
        if data["k_conv"] > data["n_eigs"]:
            raise ValidationError("cannot exceed n_eigs.", "k_conv")

    @post_load
    def make_config(self, data, **kwargs) -> PipelineConfig:
        if data["k_train"] is not None:
            data["k_train"] = tuple(data["k_train"])
        data["block_weights"] = tuple(data["block_weights"])
        return PipelineConfig(**data)


def parse_config(data: dict, source: Optional[Path] = None) -> PipelineConfig:
    try:
        config = PipelineConfigSchema().load(data)
    except ValidationError as e:
        where = f" in {source}" if source is not None else ""
        raise ConfigError(f"invalid configuration{where}: {e.messages}") from e
    if source is not None:
        config = replace(config, source=source)
    return config


def load_config(path: Union[str, Path, None] = None) -> PipelineConfig:
    """
    Read a JSON configuration file; None gives the defaults.

    >>> load_config().lam
    0.12
    """
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        with open(path, encoding="UTF-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object, not {type(data).__name__}")
    config = parse_config(data, path)
    logger.debug("loaded configuration from %s", path)
    return config
