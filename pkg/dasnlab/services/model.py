"""
The suppression network: encoder E, spoof classifier C, secondary spoof
classifier S, and one discrimination head (I^k, D^k) per spoof-irrelevant
factor k.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from dasnlab.errors.exceptions import ConfigurationError
from dasnlab.services.autodiff import Tape, Tensor, constant, grl, softmax
from dasnlab.services.nn import DenseLayer, ParamGroup, mlp_forward, restore, snapshot
from dasnlab.services.rng import Xoshiro256StarStar

SIF_FACTORS = ("identity", "environment", "sensor")
DOMAIN_FACTOR = "domain"
KNOWN_FACTORS = SIF_FACTORS + (DOMAIN_FACTOR,)

SPOOF = 0
GENUINE = 1
SPOOF_CLASSES = 2


@dataclass(frozen=True)
class DasnConfig:
    """Architecture of one model."""

    input_dim: int
    feature_dim: int = 32
    hidden_dim: int = 32
    factors: Tuple[str, ...] = ()
    class_counts: Dict[str, int] = field(default_factory=dict)
    spoof_classes: int = SPOOF_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if min(self.input_dim, self.feature_dim, self.hidden_dim) < 1:
            raise ConfigurationError("input_dim, feature_dim and hidden_dim must be positive")
        if self.spoof_classes != SPOOF_CLASSES:
            raise ConfigurationError("spoof_classes is fixed at 2")
        if len(set(self.factors)) != len(self.factors):
            raise ConfigurationError(f"Duplicate factors in {self.factors}")
        for k in self.factors:
            if k not in KNOWN_FACTORS:
                raise ConfigurationError(f"Unknown factor '{k}'; expected one of {KNOWN_FACTORS}")
            if self.class_counts.get(k, 0) < 2:
                raise ConfigurationError(f"Factor '{k}' needs at least 2 classes")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "factors": list(self.factors),
            "class_counts": {k: self.class_counts[k] for k in self.factors},
            "spoof_classes": self.spoof_classes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DasnConfig":
        return cls(
            input_dim=int(data["input_dim"]),
            feature_dim=int(data["feature_dim"]),
            hidden_dim=int(data["hidden_dim"]),
            factors=tuple(data.get("factors", ())),
            class_counts={k: int(v) for k, v in data.get("class_counts", {}).items()},
            spoof_classes=int(data.get("spoof_classes", SPOOF_CLASSES)),
        )


def _layout(config: DasnConfig) -> Dict[str, List[Tuple[str, int, int, str]]]:
    f, h = config.feature_dim, config.hidden_dim
    layout = {
        "E": [("E.0", config.input_dim, h, "relu"), ("E.1", h, f, "none")],
        "C": [("C.0", f, SPOOF_CLASSES, "none")],
        "S": [("S.0", f, SPOOF_CLASSES, "none")],
    }
    for k in config.factors:
        layout[f"I.{k}"] = [(f"I.{k}.0", f, f, "relu")]
        layout[f"D.{k}"] = [
            (f"D.{k}.0", f, h, "relu"),
            (f"D.{k}.1", h, config.class_counts[k], "none"),
        ]
    return layout


class DasnModel:
    """
    Parameter groups E, C, S, I.<k>, D.<k> and the forward paths over them.
    """

    def __init__(self, config: DasnConfig, groups: Dict[str, ParamGroup]):
        self.config = config
        self.groups = groups

    @classmethod
    def initialize(cls, config: DasnConfig, seed: int) -> "DasnModel":
        """Xavier-uniform initialization, one derived stream per layer."""
        groups = {}
        for group_name, specs in _layout(config).items():
            layers = [
                DenseLayer.xavier(
                    name, n_in, n_out, act, Xoshiro256StarStar.from_keys(seed, "init", name)
                )
                for name, n_in, n_out, act in specs
            ]
            groups[group_name] = ParamGroup(group_name, layers)
        return cls(config, groups)

    @classmethod
    def zeros(cls, config: DasnConfig) -> "DasnModel":
        groups = {}
        for group_name, specs in _layout(config).items():
            layers = [
                DenseLayer(name, np.zeros((n_in, n_out)), np.zeros(n_out), act)
                for name, n_in, n_out, act in specs
            ]
            groups[group_name] = ParamGroup(group_name, layers)
        return cls(config, groups)

    @property
    def factors(self) -> Tuple[str, ...]:
        return self.config.factors

    @property
    def is_pruned(self) -> bool:
        return "S" not in self.groups

    def group(self, name: str) -> ParamGroup:
        try:
            return self.groups[name]
        except KeyError:
            raise ConfigurationError(f"Model has no parameter group '{name}'") from None

    def select(self, names: Iterable[str]) -> List[ParamGroup]:
        """Groups in the order named."""
        return [self.group(name) for name in names]

    def head_group_names(self) -> List[str]:
        """Names of every I^k and D^k group, factor by factor."""
        names = []
        for k in self.factors:
            names += [f"I.{k}", f"D.{k}"]
        return names

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for group in self.groups.values():
            params.update(group.parameters())
        return params

    def snapshot(self, names: Optional[Iterable[str]] = None) -> bytes:
        names = list(self.groups) if names is None else list(names)
        return snapshot(self.select(names))

    def restore(self, image: bytes, strict: bool = True) -> None:
        restore(image, self.groups.values(), strict=strict)

    def copy(self) -> "DasnModel":
        """Deep copy of every parameter group."""
        groups = {
            name: ParamGroup(
                name,
                [
                    DenseLayer(l.name, l.weight.copy(), l.bias.copy(), l.activation)
                    for l in group.layers
                ],
            )
            for name, group in self.groups.items()
        }
        return DasnModel(self.config, groups)

    def prune_heads(self) -> "DasnModel":
        """Copy holding only the inference path E and C."""
        full = self.copy()
        return DasnModel(self.config, {"E": full.groups["E"], "C": full.groups["C"]})

    def _check_factor(self, k: str) -> None:
        if k not in self.factors or f"I.{k}" not in self.groups:
            raise ConfigurationError(f"Factor '{k}' is not active in this model")


def encode(model: DasnModel, x: Union[np.ndarray, Tensor], tape: Optional[Tape] = None) -> Tensor:
    """E(x) for a batch [batch x input_dim]."""
    return mlp_forward(model.group("E").layers, x, tape)


def classify_spoof(model: DasnModel, features: Tensor) -> Tensor:
    """C(E(x)) logits [batch x 2]."""
    return mlp_forward(model.group("C").layers, features, features.tape)


def head_forward(
    model: DasnModel,
    k: str,
    features: Tensor,
    reverse_into_encoder: bool = False,
) -> Tuple[Tensor, Tensor]:
    """
    Discrimination head for factor k.

    Args:
        model: The network.
        k: Active factor name.
        features: Encoder output.
        reverse_into_encoder: Insert a GRL between the encoder and I^k.

    Returns:
        Tuple of (I^k output, D^k logits [batch x N^k]).
    """
    model._check_factor(k)
    tape = features.tape
    h = grl(features) if reverse_into_encoder else features
    intermediate = mlp_forward(model.group(f"I.{k}").layers, h, tape)
    logits = mlp_forward(model.group(f"D.{k}").layers, intermediate, tape)
    return intermediate, logits


def secondary_classify(
    model: DasnModel,
    k: str,
    features: Tensor,
    reverse_into_intermediate: bool = False,
) -> Tensor:
    """
    S(I^k(E(x))) logits; the optional GRL sits between I^k and S, so the
    reversed gradient reaches I^k (and through it E) only.
    """
    model._check_factor(k)
    tape = features.tape
    intermediate = mlp_forward(model.group(f"I.{k}").layers, features, tape)
    h = grl(intermediate) if reverse_into_intermediate else intermediate
    return mlp_forward(model.group("S").layers, h, tape)


def infer(model: DasnModel, x: np.ndarray) -> np.ndarray:
    """Genuine-class probability per row, using E and C only."""
    logits = classify_spoof(model, encode(model, constant(x)))
    return softmax(logits).data[:, GENUINE].copy()
