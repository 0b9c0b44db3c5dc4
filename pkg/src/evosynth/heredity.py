"""Synaptic probability models ("DNA") of trained networks.

Each living synapse k of a trained generation gets an inheritance probability

    p_k = exp(|w_k| / Z - 1)

where Z is the largest strength in the synapse's layer (or in the whole
network with ``normalization="global"``). The strongest synapse therefore has
p = 1 and a zero-strength synapse has p = 1/e. Synapses that are already
masked off have no entry and can never come back.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HeredityError
from .nn import Network

NORMALIZATIONS = ("layer", "global")


@dataclass
class SynapticStrengths:
    """|weight| of every living synapse, per layer.

    ``indices[i]`` are flat positions into layer i's weight tensor, in
    ascending order; ``values[i]`` are the matching strengths.
    """

    indices: list[np.ndarray]
    values: list[np.ndarray]
    shapes: list[tuple[int, ...]]
    generation: int


@dataclass
class DnaModel:
    indices: list[np.ndarray]
    probabilities: list[np.ndarray]
    z: list[float]
    shapes: list[tuple[int, ...]]
    generation: int

    @property
    def num_synapses(self) -> int:
        return int(sum(len(ix) for ix in self.indices))

    def dense(self, layer: int) -> np.ndarray:
        """Probabilities scattered back to the layer's weight shape (0 where absent)."""
        out = np.zeros(int(np.prod(self.shapes[layer])), dtype=np.float64)
        out[self.indices[layer]] = self.probabilities[layer]
        return out.reshape(self.shapes[layer])


def extract_strengths(network: Network) -> SynapticStrengths:
    arch = network.architecture
    indices, values, shapes = [], [], []
    for w, m in zip(network.weights, arch.masks):
        idx = np.flatnonzero(m)
        indices.append(idx)
        values.append(np.abs(w.ravel()[idx]).astype(np.float64))
        shapes.append(tuple(m.shape))
    return SynapticStrengths(indices, values, shapes, arch.generation)


def compute_normalization(strengths: SynapticStrengths, layer: int) -> float:
    """Z for one layer: the maximum strength, or 1.0 if that is 0 or the layer is empty."""
    vals = strengths.values[layer]
    if vals.size == 0:
        return 1.0
    z = float(vals.max())
    return z if z > 0 else 1.0


def global_normalization(strengths: SynapticStrengths) -> float:
    peaks = [float(v.max()) for v in strengths.values if v.size]
    z = max(peaks, default=0.0)
    return z if z > 0 else 1.0


def synapse_probability(strength, z):
    strength = np.asarray(strength, dtype=np.float64)
    if not z > 0:
        raise HeredityError(f"normalization constant must be positive, got {z}")
    if np.any(strength > z):
        raise HeredityError(f"strength {np.max(strength)} exceeds normalization constant {z}")
    if np.any(strength < 0):
        raise HeredityError("strengths must be non-negative")
    p = np.exp(strength / z - 1.0)
    return float(p) if p.ndim == 0 else p


def encode_dna(network: Network, normalization: str = "layer") -> DnaModel:
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    s = extract_strengths(network)
    if normalization == "global":
        zs = [global_normalization(s)] * len(s.values)
    else:
        zs = [compute_normalization(s, i) for i in range(len(s.values))]
    probs = [
        synapse_probability(v, z) if v.size else np.zeros(0) for v, z in zip(s.values, zs)
    ]
    return DnaModel(s.indices, probs, zs, s.shapes, s.generation)
