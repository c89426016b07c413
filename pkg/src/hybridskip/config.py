"""Line-based configuration: `section.key = value` UTF-8 text with the
sections model, train, data, and eval. Unknown keys are errors so typos
fail loudly; command-line flags reuse the same keys and override the file.
"""

from __future__ import annotations

from .errors import ConfigError
from .skips import SKIP_KINDS
from .unet import ACTIVATION_CHOICES, OUTPUT_TRANSFORMS, UNetConfig


def _int(raw: str) -> int:
    return int(raw, 10)


def _positive_int(raw: str) -> int:
    value = _int(raw)
    if value <= 0:
        raise ValueError("must be positive")
    return value


def _positive_float(raw: str) -> float:
    value = float(raw)
    if not value > 0:
        raise ValueError("must be positive")
    return value


def _choice(*allowed):
    def parse(raw: str) -> str:
        if raw not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return raw
    return parse


def _channel_plan(raw: str) -> tuple:
    return tuple(_positive_int(part.strip()) for part in raw.split(","))


def _resolution(raw: str) -> tuple:
    parts = raw.lower().split("x")
    if len(parts) != 2:
        raise ValueError("expected WxH")
    return (_positive_int(parts[0]), _positive_int(parts[1]))


SCHEMA = {
    "model.skip": _choice(*SKIP_KINDS),
    "model.kernel_size": _positive_int,
    "model.blend_mode": str,
    "model.activation": _choice(*ACTIVATION_CHOICES),
    "model.output_transform": _choice(*OUTPUT_TRANSFORMS),
    "model.highpass": _choice("log", "residual"),
    "model.conv_k": _positive_int,
    "model.residual_units": _positive_int,
    "model.sqex_ratio": _positive_int,
    "model.channel_plan": _channel_plan,
    "model.input_channels": _positive_int,
    "train.lr": _positive_float,
    "train.batch_size": _positive_int,
    "train.epochs": _positive_int,
    "train.seed": _int,
    "train.loss": _choice("l1", "l1_grad"),
    "train.beta1": _positive_float,
    "train.beta2": _positive_float,
    "train.adam_eps": _positive_float,
    "data.root": str,
    "data.split": str,
    "data.resolution": _resolution,
    "data.objects": _positive_int,
    "data.texture_frequency": _positive_float,
    "data.seed": _int,
    "data.count": _positive_int,
    "eval.split": str,
    "eval.max_depth": _positive_float,
}


def parse_option(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key}")
    try:
        return SCHEMA[key](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_config_text(text: str) -> dict:
    options = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} misses a section")
        try:
            options[key] = parse_option(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return options


def parse_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


_MODEL_KEYS = {
    "model.skip": "skip",
    "model.kernel_size": "filter_size",
    "model.blend_mode": "blend_mode",
    "model.activation": "activation",
    "model.output_transform": "output_transform",
    "model.highpass": "highpass",
    "model.conv_k": "conv_k",
    "model.residual_units": "residual_units",
    "model.sqex_ratio": "sqex_ratio",
    "model.channel_plan": "channel_plan",
    "model.input_channels": "input_channels",
}


def model_config(options: dict) -> UNetConfig:
    kwargs = {field: options[key]
              for key, field in _MODEL_KEYS.items() if key in options}
    return UNetConfig(**kwargs)


def train_options(options: dict) -> dict:
    """The train.* subset with the section prefix stripped."""
    return {key.split(".", 1)[1]: value
            for key, value in options.items() if key.startswith("train.")}
