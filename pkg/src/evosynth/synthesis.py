"""Stochastic synthesis of descendant architectures.

A descendant keeps synapse k of its ancestor when ``C * p_k >= u_k`` with
``u_k`` uniform on the open interval (0, 1). The raw sample is then repaired
into a trainable topology: empty layers get their most probable synapse back,
and neurons that lost all inputs or all outputs are removed together with
their remaining synapses until nothing changes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SynthesisFailure
from .heredity import DnaModel, encode_dna
from .nn import Architecture, Network

ENV_KINDS = ("constant-retention",)
DEFAULT_RETRIES = 16
_U64 = 2**64


@dataclass(frozen=True)
class EnvConstraint:
    """Environmental factor model; only a constant retention budget C exists."""

    c: float
    kind: str = "constant-retention"

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unsupported environment kind {self.kind!r}")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"retention C must lie in [0, 1], got {self.c}")


@dataclass
class SynthesisOutcome:
    architecture: Architecture
    sampled: list[int]
    forced: list[int]
    pruned: list[int]
    seed: int
    attempts: int = 1
    log: list[str] = field(default_factory=list)

    @property
    def pre_repair_retained(self) -> int:
        return int(sum(self.sampled))


def synthesis_probabilities(dna: DnaModel, env: EnvConstraint) -> list[np.ndarray]:
    return [env.c * p for p in dna.probabilities]


def uniform_open(rng: np.random.Generator, n: int) -> np.ndarray:
    """n doubles strictly inside (0, 1): (k + 1/2) / 2**52 for uniform integer k."""
    k = rng.integers(0, 2**52, size=n, dtype=np.int64)
    return (k + 0.5) * 2.0**-52


def realize(probabilities, seed) -> list[np.ndarray]:
    """Independent Bernoulli draws, one uniform per synapse, layers in order."""
    rng = np.random.default_rng(seed)
    out = []
    for p in probabilities:
        p = np.asarray(p, dtype=np.float64)
        out.append(p >= uniform_open(rng, p.size).reshape(p.shape))
    return out


# -- topology -----------------------------------------------------------------


class Topology:
    """Neuron-level wiring of an architecture.

    Neurons are the output units of weight layers, numbered globally; input
    channels are encoded as negative ids ``-(c + 1)``. For every weight layer,
    ``feeds[i][j]`` is the neuron driving input slot j (a channel for conv2d,
    a feature for dense).
    """

    def __init__(self, arch: Architecture):
        self.arch = arch
        self.weight_layers = arch.weight_layers
        self.offset = {}
        n = 0
        for i in self.weight_layers:
            self.offset[i] = n
            n += arch.layers[i].out_size
        self.num_units = n
        shapes = arch.shapes
        input_shape = tuple(arch.input_shape)
        prov_in = -(np.arange(input_shape[0]) + 1)
        provs = []
        cur = prov_in
        cur_shape = input_shape
        self.feeds = {}
        for i, spec in enumerate(arch.layers):
            if spec.kind == "dense":
                if len(cur_shape) == 3:
                    self.feeds[i] = np.repeat(cur, cur_shape[1] * cur_shape[2])
                else:
                    self.feeds[i] = cur
                cur = self.offset[i] + np.arange(spec.out_size)
            elif spec.kind == "conv2d":
                self.feeds[i] = cur
                cur = self.offset[i] + np.arange(spec.out_size)
            elif spec.kind == "concat":
                other = prov_in if spec.source == -1 else provs[spec.source]
                cur = np.concatenate([cur, other])
            provs.append(cur)
            cur_shape = shapes[i]
        self.is_output = np.zeros(n, dtype=bool)
        out_units = cur[cur >= 0]
        self.is_output[out_units] = True

    def incoming(self, masks) -> np.ndarray:
        has_in = np.zeros(self.num_units, dtype=bool)
        for i in self.weight_layers:
            m = masks[i]
            has_in[self.offset[i] : self.offset[i] + m.shape[0]] = m.reshape(m.shape[0], -1).any(axis=1)
        return has_in

    def outgoing(self, masks) -> np.ndarray:
        has_out = np.zeros(self.num_units, dtype=bool)
        for i in self.weight_layers:
            m = masks[i]
            used = m.reshape(m.shape[0], m.shape[1], -1).any(axis=(0, 2))
            src = self.feeds[i]
            keep = src >= 0
            np.logical_or.at(has_out, src[keep], used[keep])
        return has_out

    def kill(self, masks, dead):
        """Mask every synapse incident to a dead neuron, in place."""
        for i in self.weight_layers:
            m = masks[i]
            m[dead[self.offset[i] : self.offset[i] + m.shape[0]]] = False
            src = self.feeds[i]
            cut = np.zeros(src.shape, dtype=bool)
            cut[src >= 0] = dead[src[src >= 0]]
            if cut.any():
                m[:, cut] = False

    def alive_flags(self, alive) -> list[np.ndarray]:
        out = []
        for i, spec in enumerate(self.arch.layers):
            if spec.has_weights:
                out.append(alive[self.offset[i] : self.offset[i] + spec.out_size].copy())
            else:
                out.append(np.zeros(0, dtype=bool))
        return out


def check_validity(arch: Architecture) -> list[str]:
    """Problems with an architecture's neuron invariants (empty when valid)."""
    problems = []
    arch.validate()
    if not arch.weight_layers:
        return problems
    topo = Topology(arch)
    alive = np.concatenate([arch.alive[i] for i in topo.weight_layers])
    has_in = topo.incoming(arch.masks)
    has_out = topo.outgoing(arch.masks)
    if np.any(~alive & (has_in | has_out)):
        problems.append("a dead neuron still has unmasked synapses")
    if not np.any(alive & topo.is_output & has_in):
        problems.append("no unmasked path from input to output")
    return problems


def _scatter(dna: DnaModel, raw):
    masks = []
    for idx, shape, r in zip(dna.indices, dna.shapes, raw):
        m = np.zeros(int(np.prod(shape)), dtype=bool)
        m[idx[r]] = True
        masks.append(m.reshape(shape))
    return masks


def repair(raw, dna: DnaModel, template: Architecture, probabilities=None):
    """Turn a raw sample into a valid descendant architecture.

    ``raw`` holds one boolean array per layer aligned with ``dna.indices``.
    Returns ``(architecture, forced, pruned, log)``; raises SynthesisFailure
    when no input-to-output path survives.
    """
    probs = dna.probabilities if probabilities is None else probabilities
    raw = [np.asarray(r, dtype=bool).copy() for r in raw]
    log = []
    forced = [0] * len(raw)
    for i, (r, p) in enumerate(zip(raw, probs)):
        if r.size and not r.any():
            k = int(np.argmax(p))
            r[k] = True
            forced[i] = 1
            log.append(f"layer {i}: forced synapse {int(dna.indices[i][k])} (p'={float(p[k]):.6g})")
    masks = _scatter(dna, raw)
    before = [int(m.sum()) for m in masks]
    arch = Architecture(template.input_shape, template.layers, masks, [], template.generation + 1)
    if not template.weight_layers:
        arch.alive = [a.copy() for a in template.alive]
        return arch, forced, [0] * len(raw), log
    topo = Topology(arch)
    alive = np.concatenate([template.alive[i] for i in topo.weight_layers]).copy()
    topo.kill(masks, ~alive)
    while True:
        dead = alive & (~topo.incoming(masks) | (~topo.outgoing(masks) & ~topo.is_output))
        if not dead.any():
            break
        alive &= ~dead
        topo.kill(masks, dead)
    pruned = [b - int(m.sum()) for b, m in zip(before, masks)]
    for i, n in enumerate(pruned):
        if n:
            log.append(f"layer {i}: pruned {n} synapses of dead neurons")
    arch.alive = topo.alive_flags(alive)
    if not np.any(alive & topo.is_output):
        raise SynthesisFailure("no input-to-output path survives repair")
    return arch, forced, pruned, log


def synthesize(
    ancestor: Network,
    env: EnvConstraint,
    seed: int,
    retries: int = DEFAULT_RETRIES,
    normalization: str = "layer",
) -> SynthesisOutcome:
    """encode_dna -> synthesis_probabilities -> realize -> repair.

    On SynthesisFailure the draw is repeated with seed+1, up to ``retries``
    extra attempts.
    """
    dna = encode_dna(ancestor, normalization)
    probs = synthesis_probabilities(dna, env)
    last = None
    for attempt in range(retries + 1):
        s = (int(seed) + attempt) % _U64
        raw = realize(probs, s)
        try:
            arch, forced, pruned, log = repair(raw, dna, ancestor.architecture, probs)
        except SynthesisFailure as exc:
            last = exc
            continue
        return SynthesisOutcome(
            architecture=arch,
            sampled=[int(r.sum()) for r in raw],
            forced=forced,
            pruned=pruned,
            seed=s,
            attempts=attempt + 1,
            log=log,
        )
    raise SynthesisFailure(f"synthesis failed after {retries + 1} attempts starting at seed {seed}: {last}")
