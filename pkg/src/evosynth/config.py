"""INI run-configuration files.

Sections and keys (all keys in a present section are checked; unknown
sections or keys are rejected)::

    [network]     input = CxHxW            (or a feature count for dense nets)
                  layers = one layer per line, e.g.
                      conv2d in=3 out=16 kernel=3 stride=1 padding=1 activation=relu
                      dense in=64 out=10 activation=sigmoid
                      upsample factor=2
                      concat source=1        (0-based layer index, -1 = network input)
                      activation fn=sigmoid
    [evolution]   generations, retention, seed, inherit_weights (default false),
                  normalization (layer | global, default layer)
    [training]    learning_rate, epochs, batch_size, loss (bce | mse),
                  init (glorot-uniform | constant, default glorot-uniform)
    [data]        source = synthetic: seed, count, height, width
                  source = directory: images, masks
                  fractions = train, val, test (default 0.5, 0.1, 0.4)
    [metrics]     beta_squared (default 0.3), threshold (sweep | number); optional
    [output]      directory

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import configparser
import os

from .errors import ConfigError
from .evolution import DataSource, EvolutionConfig
from .metrics import MetricsConfig
from .nn import LayerSpec, TrainConfig, infer_shapes
from .synthesis import EnvConstraint

SCHEMA = {
    "network": ({"input", "layers"}, set()),
    "evolution": ({"generations", "retention", "seed"}, {"inherit_weights", "normalization"}),
    "training": ({"learning_rate", "epochs", "batch_size", "loss"}, {"init"}),
    "data": ({"source"}, {"seed", "count", "height", "width", "images", "masks", "fractions"}),
    "metrics": (set(), {"beta_squared", "threshold"}),
    "output": ({"directory"}, set()),
}
OPTIONAL_SECTIONS = {"metrics"}

_LAYER_KEYS = {
    "dense": {"in", "out", "activation"},
    "conv2d": {"in", "out", "kernel", "stride", "padding", "activation"},
    "upsample": {"factor"},
    "concat": {"source"},
    "activation": {"fn"},
}


def parse_layer(line: str) -> LayerSpec:
    tokens = line.split()
    kind, args = tokens[0], {}
    if kind not in _LAYER_KEYS:
        raise ConfigError(f"[network] unknown layer kind {kind!r}")
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep or key not in _LAYER_KEYS[kind]:
            raise ConfigError(f"[network] bad token {tok!r} for {kind} layer")
        args[key] = value
    try:
        if kind == "dense":
            return LayerSpec("dense", in_size=int(args["in"]), out_size=int(args["out"]),
                             activation=args.get("activation", "identity"))
        if kind == "conv2d":
            k = args.get("kernel", "3")
            kernel = tuple(int(v) for v in k.split("x")) if "x" in k else (int(k), int(k))
            return LayerSpec("conv2d", in_size=int(args["in"]), out_size=int(args["out"]), kernel=kernel,
                             stride=int(args.get("stride", 1)), padding=int(args.get("padding", 0)),
                             activation=args.get("activation", "identity"))
        if kind == "upsample":
            return LayerSpec("upsample", factor=int(args.get("factor", 2)))
        if kind == "concat":
            return LayerSpec("concat", source=int(args["source"]))
        return LayerSpec("activation", activation=args["fn"])
    except KeyError as exc:
        raise ConfigError(f"[network] {kind} layer missing {exc.args[0]}=") from None
    except ValueError as exc:
        raise ConfigError(f"[network] bad value in {line!r}: {exc}") from None


def _parse_shape(text):
    try:
        return tuple(int(v) for v in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise ConfigError(f"[network] input must look like 3x64x64, got {text!r}") from None


def _get(section, key, conv):
    raw = section[key]
    try:
        if conv is bool:
            return section.getboolean(key)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def _path(base, value):
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base, value))


def parse_config(text: str, base_dir: str = ".") -> EvolutionConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
    for name, (required, optional) in SCHEMA.items():
        if name not in cp:
            if name in OPTIONAL_SECTIONS:
                continue
            raise ConfigError(f"missing section [{name}]")
        keys = set(cp[name])
        if keys - required - optional:
            raise ConfigError(f"[{name}] unknown key(s): {', '.join(sorted(keys - required - optional))}")
        if required - keys:
            raise ConfigError(f"[{name}] missing key(s): {', '.join(sorted(required - keys))}")

    net = cp["network"]
    input_shape = _parse_shape(net["input"])
    layers = tuple(parse_layer(line) for line in net["layers"].splitlines() if line.strip())
    try:
        infer_shapes(input_shape, layers)
    except ValueError as exc:
        raise ConfigError(f"[network] {exc}") from None

    ev = cp["evolution"]
    tr = cp["training"]
    try:
        env = EnvConstraint(_get(ev, "retention", float))
        train = TrainConfig(
            learning_rate=_get(tr, "learning_rate", float),
            epochs=_get(tr, "epochs", int),
            batch_size=_get(tr, "batch_size", int),
            loss=tr["loss"],
            init=tr.get("init", "glorot-uniform"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    normalization = ev.get("normalization", "layer")
    if normalization not in ("layer", "global"):
        raise ConfigError(f"[evolution] normalization must be layer or global, got {normalization!r}")

    dsec = cp["data"]
    fractions = (0.5, 0.1, 0.4)
    if "fractions" in dsec:
        try:
            fractions = tuple(float(v) for v in dsec["fractions"].split(","))
        except ValueError:
            raise ConfigError("[data] fractions must be three comma-separated numbers") from None
        if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
            raise ConfigError("[data] fractions must be three non-negative numbers summing to 1")
    source = dsec["source"]
    if source == "synthetic":
        missing = {"seed", "count", "height", "width"} - set(dsec)
        if missing:
            raise ConfigError(f"[data] synthetic source missing key(s): {', '.join(sorted(missing))}")
        data = DataSource("synthetic", seed=_get(dsec, "seed", int), count=_get(dsec, "count", int),
                          height=_get(dsec, "height", int), width=_get(dsec, "width", int), fractions=fractions)
        if data.count < 3:
            raise ConfigError("[data] count must be >= 3")
        if min(data.height, data.width) < 16:
            raise ConfigError("[data] height and width must be >= 16")
    elif source == "directory":
        missing = {"images", "masks"} - set(dsec)
        if missing:
            raise ConfigError(f"[data] directory source missing key(s): {', '.join(sorted(missing))}")
        data = DataSource("directory", images=_path(base_dir, dsec["images"]),
                          masks=_path(base_dir, dsec["masks"]), fractions=fractions)
    else:
        raise ConfigError(f"[data] source must be synthetic or directory, got {source!r}")

    metrics = MetricsConfig()
    if "metrics" in cp:
        ms = cp["metrics"]
        threshold = ms.get("threshold", "sweep")
        try:
            metrics = MetricsConfig(
                beta_sq=_get(ms, "beta_squared", float) if "beta_squared" in ms else 0.3,
                threshold=threshold if threshold == "sweep" else float(threshold),
            )
        except ValueError as exc:
            raise ConfigError(f"[metrics] {exc}") from None

    try:
        return EvolutionConfig(
            generations=_get(ev, "generations", int),
            env=env,
            train=train,
            base_seed=_get(ev, "seed", int),
            input_shape=input_shape,
            layers=layers,
            data=data,
            output_dir=_path(base_dir, cp["output"]["directory"]),
            inherit_weights=_get(ev, "inherit_weights", bool) if "inherit_weights" in ev else False,
            normalization=normalization,
            metrics=metrics,
        )
    except ValueError as exc:
        raise ConfigError(f"[evolution] {exc}") from None


def load_config(path) -> EvolutionConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
