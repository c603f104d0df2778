"""
Dense layers, named parameter groups, Adam, and bit-exact parameter images.
"""

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from dasnlab.errors.exceptions import ContractError, DimensionError, FormatError
from dasnlab.services.autodiff import Tape, Tensor, add, constant, matmul, relu
from dasnlab.services.rng import Xoshiro256StarStar

IMAGE_MAGIC = b"DASN"
IMAGE_VERSION = 1
ACTIVATIONS = ("relu", "none")


@dataclass
class DenseLayer:
    """
    One fully connected layer, y = act(x @ weight + bias).
    """

    name: str
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"Unknown activation '{self.activation}' for layer {self.name}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"layer {self.name}: weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @classmethod
    def xavier(
        cls,
        name: str,
        in_dim: int,
        out_dim: int,
        activation: str,
        rng: Xoshiro256StarStar,
    ) -> "DenseLayer":
        """Xavier-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-limit, limit, in_dim * out_dim).reshape(in_dim, out_dim)
        return cls(name, weight, np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Weight and bias keyed by their qualified names."""
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def assign(self, param_name: str, value: np.ndarray) -> None:
        if param_name == f"{self.name}.weight":
            self.weight = value
        elif param_name == f"{self.name}.bias":
            self.bias = value
        else:
            raise ContractError(f"{param_name} is not a parameter of layer {self.name}")

    def forward(self, x: Tensor, tape: Optional[Tape] = None) -> Tensor:
        """x @ W + b followed by the layer activation."""
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"layer {self.name} expects input [batch x {self.in_dim}], got {x.shape}"
            )
        if tape is None:
            w, b = constant(self.weight), constant(self.bias)
        else:
            w = tape.watch(f"{self.name}.weight", self.weight)
            b = tape.watch(f"{self.name}.bias", self.bias)
        out = add(matmul(x, w), b)
        return relu(out) if self.activation == "relu" else out


def mlp_forward(
    layers: Iterable[DenseLayer],
    x: Union[Tensor, np.ndarray],
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    Run a chain of dense layers.

    Args:
        layers: Layers applied in order.
        x: Input batch [batch x in].
        tape: Tape to record on; None evaluates without recording.

    Returns:
        Output batch [batch x out].
    """
    h = x if isinstance(x, Tensor) else constant(x)
    for layer in layers:
        h = layer.forward(h, tape)
    return h


@dataclass
class ParamGroup:
    """
    Named, ordered set of layers updated (or frozen) together.
    """

    name: str
    layers: List[DenseLayer]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Every layer's parameters, in layer order."""
        params: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def assign(self, param_name: str, value: np.ndarray) -> None:
        prefix = param_name.rsplit(".", 1)[0]
        for layer in self.layers:
            if layer.name == prefix:
                layer.assign(param_name, value)
                return
        raise ContractError(f"{param_name} is not in group {self.name}")


@dataclass
class AdamState:
    """Moment buffers and step counter for one Adam optimizer."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, groups: List[ParamGroup], grads: Dict[str, np.ndarray]) -> None:
    """
    Apply one bias-corrected Adam update to the listed groups only.

    Raises:
        ContractError: If a parameter of a listed group has no gradient.
    """
    for group in groups:
        for name in group.parameters():
            if name not in grads:
                raise ContractError(f"Missing gradient for {name} (group {group.name})")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for group in groups:
        for name, value in group.parameters().items():
            g = grads[name]
            if g.shape != value.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
            m = state.m.get(name, np.zeros_like(value))
            v = state.v.get(name, np.zeros_like(value))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            state.m[name] = m
            state.v[name] = v
            if state.lr == 0.0:
                continue
            update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            group.assign(name, value - update)


def encode_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    """
    Serialize named float64 arrays into the DASN image format.
    """
    chunks = [IMAGE_MAGIC, struct.pack("<II", IMAGE_VERSION, len(arrays))]
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value, dtype=np.float64)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype("<f8").tobytes())
    return b"".join(chunks)


def decode_arrays(image: bytes) -> Dict[str, np.ndarray]:
    """
    Parse a DASN image back into named arrays.

    Raises:
        FormatError: On a bad magic, an unknown version, or truncation.
    """
    if image[:4] != IMAGE_MAGIC:
        raise FormatError("Not a DASN parameter image")
    try:
        version, count = struct.unpack_from("<II", image, 4)
        if version != IMAGE_VERSION:
            raise FormatError(f"Unsupported image version {version}")
        offset = 12
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", image, offset)
            offset += 2
            name = image[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", image, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", image, offset)
            offset += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if offset + 8 * n > len(image):
                raise FormatError(f"Image truncated inside {name}")
            data = np.frombuffer(image, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            arrays[name] = data.astype(np.float64).reshape(shape)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"Corrupt parameter image: {exc}") from exc
    if offset != len(image):
        raise FormatError("Trailing bytes after parameter image")
    return arrays


def snapshot(groups: Iterable[ParamGroup]) -> bytes:
    """Byte-exact image of every parameter in the groups."""
    arrays: Dict[str, np.ndarray] = {}
    for group in groups:
        arrays.update(group.parameters())
    return encode_arrays(arrays)


def restore(image: bytes, groups: Iterable[ParamGroup], strict: bool = True) -> None:
    """
    Load a parameter image into the groups.

    Args:
        image: Bytes produced by `snapshot`.
        groups: Target groups; their layers are overwritten in place.
        strict: When True the image must hold exactly the groups' parameters;
            otherwise extra entries in the image are ignored.

    Raises:
        FormatError: If names or shapes do not match.
    """
    groups = list(groups)
    arrays = decode_arrays(image)
    expected = {}
    for group in groups:
        for name, value in group.parameters().items():
            expected[name] = (group, value.shape)

    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or (strict and extra):
        raise FormatError(
            "Parameter image does not match the architecture",
            payload={"missing": missing, "unexpected": extra if strict else []},
        )
    for name, (group, shape) in expected.items():
        if arrays[name].shape != shape:
            raise FormatError(
                f"Shape mismatch for {name}: image {arrays[name].shape}, model {shape}"
            )
    for name, (group, _) in expected.items():
        group.assign(name, arrays[name].copy())
