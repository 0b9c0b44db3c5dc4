"""Generation loop and lineage checkpoints.

Generation 1 is the template trained from scratch. Every later generation is
synthesized from the previous trained network, freshly initialized (unless
weights are inherited), trained with the same TrainConfig, evaluated on the
test split and checkpointed before the next synthesis.

Checkpoint directory ``gen-<g>/``:

* ``manifest.json``: format version, generation, input shape, layer specs,
  tensor shapes, alive flags, synapse counts, seeds, metrics and a 64-bit
  blake2b checksum of the two blobs.
* ``weights.bin``: every layer's weight tensor, then every layer's bias
  tensor, little-endian float32, row-major.
* ``mask.bin``: per-layer masks, bit-packed LSB first, each padded to a byte.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import metrics as M
from .data import DatasetSplit, generate_synthetic, load_directory, to_arrays
from .errors import CorruptCheckpoint, EvosynthError, SynthesisFailure, TrainingDiverged
from .nn import Architecture, LayerSpec, Network, TrainConfig, count_synapses, initialize, predict, train
from .synthesis import DEFAULT_RETRIES, EnvConstraint, synthesize

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MASK64 = 2**64 - 1
PROBE_COUNT = 5


@dataclass
class DataSource:
    """Where a run's samples come from: synthetic parameters or a directory pair."""

    kind: str = "synthetic"
    seed: int = 0
    count: int = 600
    height: int = 64
    width: int = 64
    images: str = ""
    masks: str = ""
    fractions: tuple[float, float, float] = (0.5, 0.1, 0.4)

    def load(self) -> DatasetSplit:
        if self.kind == "synthetic":
            return generate_synthetic(self.seed, self.count, self.height, self.width, self.fractions)
        if self.kind == "directory":
            return load_directory(self.images, self.masks, self.fractions)
        raise ValueError(f"unknown data source {self.kind!r}")


@dataclass
class EvolutionConfig:
    generations: int
    env: EnvConstraint
    train: TrainConfig
    base_seed: int
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    data: DataSource
    output_dir: str
    inherit_weights: bool = False
    normalization: str = "layer"
    metrics: M.MetricsConfig = field(default_factory=M.MetricsConfig)
    retries: int = DEFAULT_RETRIES
    probe_count: int = PROBE_COUNT

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0 <= self.base_seed <= _MASK64:
            raise ValueError("base seed must be a 64-bit unsigned integer")

    def template(self) -> Architecture:
        return Architecture.full(self.input_shape, self.layers)


def synthesis_seed(base_seed, g):
    return (base_seed ^ g) & _MASK64


def init_seed(base_seed, g):
    return (base_seed ^ (g + 2**32)) & _MASK64


@dataclass
class LineageRecord:
    rows: list[dict] = field(default_factory=list)
    status: str = "running"
    error: str = ""

    @property
    def generations(self) -> list[int]:
        return [r["generation"] for r in self.rows]

    def to_json(self) -> dict:
        return {"status": self.status, "error": self.error, "rows": self.rows}


class EvolutionAborted(EvosynthError):
    def __init__(self, record: LineageRecord, cause: Exception):
        super().__init__(f"evolution aborted after {len(record.rows)} generation(s): {cause}")
        self.record = record
        self.cause = cause


# -- checkpoints ----------------------------------------------------------------


def _checksum(*blobs: bytes) -> str:
    h = hashlib.blake2b(digest_size=8)
    for b in blobs:
        h.update(b)
    return h.hexdigest()


def _pack(network: Network):
    arch = network.architecture
    wblob = b"".join(np.ascontiguousarray(w, dtype="<f4").tobytes() for w in network.weights)
    wblob += b"".join(np.ascontiguousarray(b, dtype="<f4").tobytes() for b in network.biases)
    mblob = b"".join(np.packbits(m.ravel(), bitorder="little").tobytes() for m in arch.masks)
    return wblob, mblob


def save_checkpoint(network: Network, row: dict, path) -> None:
    arch = network.architecture
    os.makedirs(path, exist_ok=True)
    wblob, mblob = _pack(network)
    manifest = {
        "format_version": FORMAT_VERSION,
        "generation": arch.generation,
        "input_shape": list(arch.input_shape),
        "layers": [s.to_dict() for s in arch.layers],
        "weight_shapes": [list(w.shape) for w in network.weights],
        "bias_shapes": [list(b.shape) for b in network.biases],
        "alive": ["".join("1" if a else "0" for a in flags) for flags in arch.alive],
        "synapse_counts": [int(m.sum()) for m in arch.masks],
        "num_synapses": count_synapses(arch),
        "record": row,
        "checksum": _checksum(wblob, mblob),
    }
    with open(os.path.join(path, "weights.bin"), "wb") as fh:
        fh.write(wblob)
    with open(os.path.join(path, "mask.bin"), "wb") as fh:
        fh.write(mblob)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Network, dict]:
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, "weights.bin"), "rb") as fh:
            wblob = fh.read()
        with open(os.path.join(path, "mask.bin"), "rb") as fh:
            mblob = fh.read()
    except (OSError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    try:
        if manifest["format_version"] != FORMAT_VERSION:
            raise CorruptCheckpoint(f"{path}: unsupported format version {manifest['format_version']}")
        layers = tuple(LayerSpec.from_dict(d) for d in manifest["layers"])
        wshapes = [tuple(s) for s in manifest["weight_shapes"]]
        bshapes = [tuple(s) for s in manifest["bias_shapes"]]
        alive_txt = manifest["alive"]
        checksum = manifest["checksum"]
        generation = int(manifest["generation"])
        input_shape = tuple(manifest["input_shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed manifest ({exc})") from exc
    if not (len(wshapes) == len(bshapes) == len(layers) == len(alive_txt)):
        raise CorruptCheckpoint(f"{path}: manifest lists {len(layers)} layers but {len(wshapes)} weight tensors")
    for spec, ws, bs in zip(layers, wshapes, bshapes):
        want_w = spec.weight_shape if spec.has_weights else (0,)
        if ws != want_w or bs != spec.bias_shape:
            raise CorruptCheckpoint(f"{path}: tensor shape {ws} does not match layer {spec.kind}")
    sizes = [int(np.prod(s)) for s in wshapes] + [int(np.prod(s)) for s in bshapes]
    if len(wblob) != 4 * sum(sizes):
        raise CorruptCheckpoint(f"{path}: weights.bin has {len(wblob)} bytes, expected {4 * sum(sizes)}")
    mask_bytes = [(int(np.prod(s)) + 7) // 8 for s in wshapes]
    if len(mblob) != sum(mask_bytes):
        raise CorruptCheckpoint(f"{path}: mask.bin has {len(mblob)} bytes, expected {sum(mask_bytes)}")
    if _checksum(wblob, mblob) != checksum:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    flat = np.frombuffer(wblob, dtype="<f4")
    tensors, pos = [], 0
    for shape, n in zip(wshapes + bshapes, sizes):
        tensors.append(flat[pos : pos + n].astype(np.float32).reshape(shape))
        pos += n
    weights, biases = tensors[: len(wshapes)], tensors[len(wshapes) :]
    masks, pos = [], 0
    for shape, nb in zip(wshapes, mask_bytes):
        bits = np.unpackbits(np.frombuffer(mblob[pos : pos + nb], dtype=np.uint8), bitorder="little")
        masks.append(bits[: int(np.prod(shape))].astype(bool).reshape(shape))
        pos += nb
    alive = [np.array([c == "1" for c in txt], dtype=bool) for txt in alive_txt]
    arch = Architecture(input_shape, layers, masks, alive, generation)
    try:
        arch.validate()
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    for w, m in zip(weights, masks):
        if w.size and np.any(w[~m] != 0):
            raise CorruptCheckpoint(f"{path}: masked synapse with nonzero weight")
    return Network(arch, weights, biases), manifest.get("record", {})


# -- evaluation helpers -----------------------------------------------------------


def evaluate_network(network: Network, samples, cfg: M.MetricsConfig, batch_size=32) -> M.EvalReport:
    x, y = to_arrays(samples)
    pred = predict(network, x, batch_size)
    return M.evaluate(list(pred[:, 0]), list(y[:, 0]), cfg)


def dump_saliency(network: Network, samples, directory):
    """8-bit grayscale predicted maps, one PNG per sample."""
    os.makedirs(directory, exist_ok=True)
    if not samples:
        return
    x, _ = to_arrays(samples)
    pred = predict(network, x)
    for s, p in zip(samples, pred[:, 0]):
        Image.fromarray(np.round(np.clip(p, 0, 1) * 255).astype(np.uint8), mode="L").save(
            os.path.join(directory, f"{s.name}.png")
        )


def _check_input(cfg: EvolutionConfig, data: DatasetSplit):
    if not data.train or not data.test:
        raise ValueError("dataset needs non-empty train and test splits")
    s = data.train[0]
    shape = (s.image.shape[2], *s.image.shape[:2])
    if tuple(cfg.input_shape) != shape:
        raise ValueError(f"network input shape {tuple(cfg.input_shape)} does not match data shape {shape}")


# -- driver -------------------------------------------------------------------------


def run_evolution(cfg: EvolutionConfig, data: DatasetSplit | None = None, progress=None) -> LineageRecord:
    """Run all generations, writing ``gen-<g>/`` checkpoints and ``lineage.csv``.

    Raises EvolutionAborted (carrying the partial record, already persisted)
    on training divergence or synthesis failure.
    """
    if data is None:
        data = cfg.data.load()
    _check_input(cfg, data)
    os.makedirs(cfg.output_dir, exist_ok=True)
    x_train, y_train = to_arrays(data.train)
    probes = data.test[: cfg.probe_count]
    record = LineageRecord()
    csv_path = os.path.join(cfg.output_dir, "lineage.csv")
    arch = cfg.template()
    base_count = count_synapses(arch)
    prev = None
    for g in range(1, cfg.generations + 1):
        started = time.perf_counter()
        syn_seed = None
        try:
            if g > 1:
                syn_seed = synthesis_seed(cfg.base_seed, g)
                outcome = synthesize(prev, cfg.env, syn_seed, cfg.retries, cfg.normalization)
                arch = outcome.architecture
                syn_seed = outcome.seed
                log.info("gen %d: sampled %d, forced %d, pruned %d synapses",
                         g, outcome.pre_repair_retained, sum(outcome.forced), sum(outcome.pruned))
            iseed = init_seed(cfg.base_seed, g)
            if g > 1 and cfg.inherit_weights:
                net = Network(
                    arch,
                    [np.where(m, w, 0).astype(np.float32) for w, m in zip(prev.weights, arch.masks)],
                    [b.copy() for b in prev.biases],
                )
            else:
                net = initialize(arch, iseed, rule=cfg.train.init)
            tcfg = cfg.train.with_seed(iseed)
            net, trace = train(net, x_train, y_train, tcfg)
        except (TrainingDiverged, SynthesisFailure) as exc:
            record.status = "aborted"
            record.error = f"generation {g}: {exc}"
            M.write_lineage_csv(csv_path, record.rows)
            raise EvolutionAborted(record, exc) from exc
        report = evaluate_network(net, data.test, cfg.metrics)
        n = count_synapses(net.architecture)
        gen_dir = os.path.join(cfg.output_dir, f"gen-{g}")
        row = {
            "generation": g,
            "num_synapses": n,
            "efficiency_x": M.architectural_efficiency(base_count, n),
            "f_beta": report.f_beta,
            "mae": report.mae,
            "train_loss": trace[-1] if trace else float("nan"),
            "wall_time_s": time.perf_counter() - started,
            "synthesis_seed": syn_seed,
            "init_seed": iseed,
            "threshold": report.threshold,
            "checkpoint": gen_dir,
        }
        save_checkpoint(net, row, gen_dir)
        dump_saliency(net, probes, os.path.join(gen_dir, "saliency"))
        record.rows.append(row)
        M.write_lineage_csv(csv_path, record.rows)
        if progress is not None:
            progress(row)
        prev = net
    record.status = "complete"
    return record
