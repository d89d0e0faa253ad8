"""Output-size and receptive-field arithmetic for (dilated) convolution stacks.

All sizes are along one spatial axis; filters are assumed square.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from drdn.errors import InvalidStack, ParseError


@dataclass(frozen=True)
class LayerSpec:
    filter_size: int = 3
    padding: int = 0
    stride: int = 1
    dilation: int = 1

    def __post_init__(self):
        if self.filter_size < 1 or self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(f"invalid layer spec {self}")

    @property
    def effective_filter_size(self) -> int:
        k, d = self.filter_size, self.dilation
        return k + (k - 1) * (d - 1)

    def __str__(self):
        return f"{self.filter_size}:{self.padding}:{self.stride}:{self.dilation}"


@dataclass(frozen=True)
class LayerStackSpec:
    layers: Tuple[LayerSpec, ...]
    input_size: int = 40

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_size < 1:
            raise ValueError("input_size must be positive")


@dataclass(frozen=True)
class RfRow:
    layer_index: int  # 1-based
    dilation: int
    receptive_field: int
    output_size: int


@dataclass(frozen=True)
class RfTable:
    per_layer: Tuple[RfRow, ...]

    @property
    def receptive_fields(self) -> List[int]:
        return [row.receptive_field for row in self.per_layer]

    @property
    def output_sizes(self) -> List[int]:
        return [row.output_size for row in self.per_layer]

    def format(self) -> str:
        lines = ["layer\tdilation\treceptive_field\toutput_size"]
        for row in self.per_layer:
            lines.append(f"{row.layer_index}\t{row.dilation}\t{row.receptive_field}\t{row.output_size}")
        return "\n".join(lines)


def output_size(input_size: int, layer: LayerSpec) -> int:
    """Spatial output size of one convolution layer.

    Uses the effective kernel ``k + (k-1)(d-1)``:
    ``o = floor((i + 2p - k_eff) / s) + 1``.
    """
    span = input_size + 2 * layer.padding - layer.effective_filter_size
    if span < 0:
        raise InvalidStack(
            f"input of size {input_size} is smaller than the effective filter "
            f"({layer.effective_filter_size}) with padding {layer.padding}"
        )
    return span // layer.stride + 1


def output_size_additive_dilation(input_size: int, layer: LayerSpec) -> int:
    """Variant that subtracts the dilation factor directly: ``floor((i+2p-k-d)/s) + 1``.

    Only agrees with :func:`output_size` when ``(k - 1)(d - 1) == d``, i.e.
    at k=3, d=2. Kept for cross-checking that operating point.
    """
    span = input_size + 2 * layer.padding - layer.filter_size - layer.dilation
    if span < 0:
        raise InvalidStack(f"input of size {input_size} too small for {layer}")
    return span // layer.stride + 1


def receptive_field(stack: LayerStackSpec) -> RfTable:
    """Per-layer receptive field and output size.

    ``r_l = r_{l-1} + (k-1) * d_l * prod(s_1..s_{l-1})`` with ``r_0 = 1``.
    """
    if not stack.layers:
        raise InvalidStack("empty layer stack")
    rows = []
    rf, jump, size = 1, 1, stack.input_size
    for index, layer in enumerate(stack.layers, start=1):
        size = output_size(size, layer)
        rf += (layer.filter_size - 1) * layer.dilation * jump
        jump *= layer.stride
        rows.append(RfRow(index, layer.dilation, rf, size))
    return RfTable(tuple(rows))


def parse_stack(text: str) -> List[LayerSpec]:
    """Parse ``"k:p:s:d,k:p:s:d,..."`` into layer specs."""
    layers = []
    column = 1
    for chunk in text.split(","):
        fields = chunk.split(":")
        if len(fields) != 4:
            raise ParseError(f"expected k:p:s:d, got {chunk!r}", column)
        values = []
        field_col = column
        for field in fields:
            stripped = field.strip()
            if not stripped.isdigit():
                raise ParseError(f"not a non-negative integer: {field!r}", field_col)
            values.append(int(stripped))
            field_col += len(field) + 1
        try:
            layers.append(LayerSpec(*values))
        except ValueError:
            raise ParseError(f"invalid layer {chunk!r}", column) from None
        column += len(chunk) + 1
    return layers


def uniform_stack(depth: int, dilations: Sequence[int] | None = None, input_size: int = 40) -> LayerStackSpec:
    """3x3 stride-1 stack with same-padding (p = d) for each layer."""
    if dilations is None:
        dilations = [1] * depth
    return LayerStackSpec(tuple(LayerSpec(3, d, 1, d) for d in dilations), input_size)


def denoiser_dilations(depth: int) -> List[int]:
    """Dilation schedule 1, 2, ..., 2, 1 used by the dilated denoiser."""
    if depth < 3:
        raise ValueError("depth must be at least 3")
    return [1] + [2] * (depth - 2) + [1]


PRESETS = {
    "gray10": uniform_stack(10, denoiser_dilations(10), 40),
    "color12": uniform_stack(12, denoiser_dilations(12), 50),
    "dncnn17": uniform_stack(17, None, 40),
    "dncnn20": uniform_stack(20, None, 50),
}
