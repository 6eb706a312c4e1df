"""Flat key=value training configuration."""

from dataclasses import dataclass, fields

from ..errors import ConfigError


@dataclass
class TrainConfig:
    seed: int = 7
    batch_size: int = 64
    steps: int = 3000
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip_norm: float = 2.0
    warmup_steps: int = 100

    # loss scalar initialization; in the displayed loss the pair logit is
    # (t*x.y - b), so the conventional "-10 logit bias" start state (negatives
    # nearly satisfied) corresponds to init_b = +10 here
    init_t: float = 10.0
    init_b: float = 10.0

    # objective weights
    lambda_c: float = 1.0
    lambda_r: float = 0.25
    lambda_i: float = 1.0
    lambda_t: float = 1.0
    w_it: float = 1.0
    w_ii: float = 1.0
    w_tt: float = 1.0

    # EMA teacher
    ema_schedule: str = "cosine"  # cosine | constant
    ema_m_start: float = 0.992
    ema_m_end: float = 1.0
    ema_m_const: float = 0.996

    # views
    n_global: int = 2
    n_local: int = 2
    global_size: int = 48
    local_size: int = 24
    global_scale_min: float = 0.7
    global_scale_max: float = 1.0
    local_scale_min: float = 0.3
    local_scale_max: float = 0.6

    # pixel-augment strength; flips stay off by default because captions
    # carry absolute left/right semantics
    aug_flip: bool = False
    aug_jitter: float = 0.08
    aug_blur: bool = True

    # generated views
    geco: bool = True
    geco_mode: str = "cached"  # cached | online
    cross_sample_negatives: str = "mask"  # mask | negative
    recap_fraction: float = 0.5

    # routing
    it_image_source: str = "student"  # student | teacher
    chunk: int = 0  # 0 = unblocked loss; >0 = blockwise tile size

    # model sizes
    vision_patch: int = 12
    vision_width: int = 80
    vision_depth: int = 2
    vision_heads: int = 4
    embed_dim: int = 128
    text_context: int = 20
    text_width: int = 64
    text_depth: int = 2
    text_heads: int = 4
    mask_ratio: float = 0.75
    maskdec_width: int = 64
    maskdec_depth: int = 2
    maskdec_heads: int = 4
    textdec_width: int = 64
    textdec_depth: int = 2
    textdec_heads: int = 4

    precision: str = "float32"  # float32 | float64
    checkpoint_every: int = 0   # 0 = final checkpoint only

    def __post_init__(self):
        if self.init_t <= 0:
            raise ConfigError("init_t must be positive")
        for name in ("lambda_c", "lambda_r", "lambda_i", "lambda_t",
                     "w_it", "w_ii", "w_tt", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.recap_fraction <= 1.0:
            raise ConfigError("recap_fraction must lie in [0, 1]")
        contrastive_on = self.w_it > 0 or self.w_ii > 0 or self.w_tt > 0
        if contrastive_on and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 with contrastive losses")
        if self.ema_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown ema_schedule {self.ema_schedule!r}")
        if self.geco_mode not in ("cached", "online"):
            raise ConfigError(f"unknown geco_mode {self.geco_mode!r}")
        if self.cross_sample_negatives not in ("mask", "negative"):
            raise ConfigError("cross_sample_negatives must be mask or negative")
        if self.it_image_source not in ("teacher", "student"):
            raise ConfigError("it_image_source must be teacher or student")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.n_global < 2:
            raise ConfigError("n_global must be >= 2 (the teacher needs them)")
        if self.chunk < 0:
            raise ConfigError("chunk must be >= 0")

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == "float32" else np.float64

    def to_text(self):
        lines = [f"{f.name} = {_fmt(getattr(self, f.name))}"
                 for f in fields(self)]
        return "\n".join(lines) + "\n"

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TrainConfig(**d)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def canonical_keys():
    return [f.name for f in fields(TrainConfig)]


def parse_config_text(text, base=None):
    """Parse flat ``key = value`` lines ('#' comments); unknown keys error."""
    values = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    defaults = TrainConfig() if base is None else base
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, getattr(defaults, key), lineno)
    d = {f.name: getattr(defaults, f.name) for f in fields(TrainConfig)}
    d.update(values)
    return TrainConfig(**d)


def _coerce(key, val, default, lineno):
    if isinstance(default, bool):
        low = val.lower()
        if low in ("true", "on", "1", "yes"):
            return True
        if low in ("false", "off", "0", "no"):
            return False
        raise ConfigError(f"line {lineno}: {key} expects a boolean, got {val!r}")
    if isinstance(default, int):
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects an int, got {val!r}")
    if isinstance(default, float):
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects a float, got {val!r}")
    return val


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base=base)
