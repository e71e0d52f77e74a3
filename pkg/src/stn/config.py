"""Model-shape configuration shared by every module."""

from dataclasses import dataclass

from .encoder import DOWNSAMPLE, FEATURE_DIM

VARIANTS = ("stnm", "stnr", "ablation-no-spotlight")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "stnr"
    canvas_w: int = 64
    canvas_h: int = 32
    feat_dim: int = FEATURE_DIM
    hidden: int = 64          # output-history embedding width
    embed_dim: int = 16       # token embedding width
    spot_hidden: int = 64     # STNM controller hidden layer
    e_dim: int = 64           # STNR spotlight-history embedding width
    value_hidden: int = 128
    t_max: int = 24

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r" % (self.variant,))
        if self.canvas_w % DOWNSAMPLE or self.canvas_h % DOWNSAMPLE:
            raise ValueError("canvas must be divisible by %d" % DOWNSAMPLE)

    @property
    def grid_w(self):
        return self.canvas_w // DOWNSAMPLE

    @property
    def grid_h(self):
        return self.canvas_h // DOWNSAMPLE

    @property
    def state_dim(self):
        """Width of h + context + normalized handle, the head/value input."""
        return self.hidden + self.feat_dim + 3

    def to_dict(self):
        return {
            "variant": self.variant, "canvas_w": self.canvas_w,
            "canvas_h": self.canvas_h, "feat_dim": self.feat_dim,
            "hidden": self.hidden, "embed_dim": self.embed_dim,
            "spot_hidden": self.spot_hidden, "e_dim": self.e_dim,
            "value_hidden": self.value_hidden, "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, d):
        fields = {k: (v if k == "variant" else int(v)) for k, v in d.items()
                  if k in cls.__dataclass_fields__}
        return cls(**fields)
