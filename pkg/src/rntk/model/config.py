"""Architecture description for the streaming transducer."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from ..errors import ContractViolation

PREDICTOR_KINDS = ("lstm", "embedding")
EP_BRANCH_KINDS = ("standalone_lstm", "projection_only", "lstm_branch", "conformer_branch")
EP_CLASSES = 4


@dataclass
class ModelConfig:
    """Scalable model dimensions.

    Defaults are desk-scale. ``production()`` returns the production geometry:
    240-dim stacked input, 512-dim Conformer encoder with 3 layers in block 0
    and, in block 1, one 1024-dim layer, a projection back to 512 and 8 more
    layers; 8 heads, kernel 15; 2x2048 LSTM predictor projected to 640;
    640-unit joint; 16,384 word pieces; 128-dim Conformer endpointer branch.

    ``block1_widths`` lists the width of every block-1 layer. ``None`` means
    the production pattern: the first layer runs at the stacked width
    (2 * encoder_dim), the rest at encoder_dim. A projection is inserted
    wherever the width changes.
    """

    input_dim: int = 24
    encoder_dim: int = 32
    block0_layers: int = 2
    block1_layers: int = 3
    block1_widths: list | None = None
    attention_heads: int = 4
    conv_kernel_size: int = 5
    attention_left_context: int | None = None
    ff_multiplier: int = 4
    predictor_kind: str = "lstm"
    predictor_layers: int = 1
    predictor_dim: int = 32
    predictor_hidden: int = 64
    predictor_context_size: int = 2
    joint_dim: int = 32
    vocab_size: int = 12
    ep_branch_kind: str = "conformer_branch"
    ep_dim: int = 16
    ep_lstm_layers: int = 2
    ep_heads: int = 4
    lid_dim: int = 0
    eou_in_vocab: bool = False
    width_multiplier: float = 1.0
    depth_multiplier: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in (
            "input_dim",
            "encoder_dim",
            "block0_layers",
            "block1_layers",
            "attention_heads",
            "conv_kernel_size",
            "ff_multiplier",
            "predictor_dim",
            "predictor_hidden",
            "joint_dim",
            "ep_dim",
            "ep_lstm_layers",
            "ep_heads",
        ):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive, got {getattr(self, name)}")
        if self.predictor_layers < 0:
            raise ContractViolation("predictor_layers must be non-negative")
        if self.vocab_size < 2:
            raise ContractViolation("vocab_size must be at least 2")
        if self.lid_dim < 0:
            raise ContractViolation("lid_dim must be non-negative")
        if self.predictor_kind not in PREDICTOR_KINDS:
            raise ContractViolation(f"unknown predictor_kind {self.predictor_kind!r}")
        if self.predictor_kind == "embedding" and self.predictor_context_size < 1:
            raise ContractViolation("predictor_context_size must be >= 1 for the embedding predictor")
        if self.ep_branch_kind not in EP_BRANCH_KINDS:
            raise ContractViolation(f"unknown ep_branch_kind {self.ep_branch_kind!r}")
        if self.attention_left_context is not None and self.attention_left_context < 0:
            raise ContractViolation("attention_left_context must be >= 0 or None")
        if self.width_multiplier <= 0 or self.depth_multiplier <= 0:
            raise ContractViolation("capacity multipliers must be positive")
        eff = self._scaled_dims()
        for w in [eff["encoder_dim"], *eff["block1_widths"]]:
            if w % self.attention_heads:
                raise ContractViolation(f"width {w} not divisible by {self.attention_heads} heads")
        if self.ep_branch_kind == "conformer_branch" and self.ep_dim % self.ep_heads:
            raise ContractViolation(f"ep_dim {self.ep_dim} not divisible by {self.ep_heads} heads")
        if self.block1_widths is not None and len(self.block1_widths) != self.block1_layers:
            raise ContractViolation("block1_widths must list one width per block-1 layer")

    def _scaled_dims(self):
        wm, dm = self.width_multiplier, self.depth_multiplier
        h = self.attention_heads

        def width(x):
            return max(h, int(round(x * wm / h)) * h)

        d = width(self.encoder_dim)
        n1 = max(1, int(math.ceil(self.block1_layers * dm - 1e-9)))
        if self.block1_widths is None:
            widths = [2 * d] + [d] * (n1 - 1)
        else:
            base = [width(w) for w in self.block1_widths]
            widths = base + [base[-1]] * (n1 - len(base)) if n1 >= len(base) else base[:n1]
        return {
            "encoder_dim": d,
            "block0_layers": max(1, int(math.ceil(self.block0_layers * dm - 1e-9))),
            "block1_layers": n1,
            "block1_widths": widths,
            "predictor_dim": max(1, int(round(self.predictor_dim * wm))),
            "predictor_hidden": max(1, int(round(self.predictor_hidden * wm))),
            "predictor_layers": int(math.ceil(self.predictor_layers * dm - 1e-9)) if self.predictor_layers else 0,
            "joint_dim": max(1, int(round(self.joint_dim * wm))),
        }

    def effective(self):
        """The same config with multipliers folded into concrete dims."""
        if self.width_multiplier == 1.0 and self.depth_multiplier == 1.0 and self.block1_widths is not None:
            return self
        dims = self._scaled_dims()
        return dataclasses.replace(self, width_multiplier=1.0, depth_multiplier=1.0, **dims)

    @property
    def num_outputs(self):
        """Width of the recognition joint output (blank + tokens [+ EOU])."""
        return self.vocab_size + 1 + (1 if self.eou_in_vocab else 0)

    @property
    def eou_id(self):
        return self.vocab_size + 1

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def production(cls, **overrides):
        base = dict(
            input_dim=240,
            encoder_dim=512,
            block0_layers=3,
            block1_layers=9,
            block1_widths=[1024] + [512] * 8,
            attention_heads=8,
            conv_kernel_size=15,
            predictor_kind="lstm",
            predictor_layers=2,
            predictor_dim=640,
            predictor_hidden=2048,
            joint_dim=640,
            vocab_size=16384,
            ep_branch_kind="conformer_branch",
            ep_dim=128,
            ep_lstm_layers=3,
            ep_heads=8,
        )
        base.update(overrides)
        return cls(**base)
