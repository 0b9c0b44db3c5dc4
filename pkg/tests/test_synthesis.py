import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evosynth import nn
from evosynth.errors import SynthesisFailure
from evosynth.heredity import DnaModel, encode_dna
from evosynth.synthesis import (
    EnvConstraint,
    Topology,
    check_validity,
    realize,
    repair,
    synthesis_probabilities,
    synthesize,
    uniform_open,
)

from conftest import random_conv_net, random_dense_net
from oracles import binomial_sigma


def uniform_dense(sizes, value=1.0):
    layers = [nn.dense(a, b, "relu") for a, b in zip(sizes[:-1], sizes[1:])]
    arch = nn.Architecture.full((sizes[0],), layers)
    weights = [np.full(s, value) for s in (m.shape for m in arch.masks)]
    return nn.Network(arch, weights, [np.zeros(b) for b in sizes[1:]])


def single_layer_dna(p):
    p = np.asarray(p, dtype=np.float64)
    return DnaModel([np.arange(p.size)], [p], [1.0], [(1, p.size)], 1)


# -- probabilities and sampling ---------------------------------------------------------


def test_scaling_by_c():
    dna = single_layer_dna([1.0, 0.5, math.exp(-1)])
    np.testing.assert_allclose(synthesis_probabilities(dna, EnvConstraint(0.4))[0], [0.4, 0.2, 0.4 * math.exp(-1)])


def test_c_one_is_identity():
    dna = single_layer_dna([1.0, 0.7])
    np.testing.assert_array_equal(synthesis_probabilities(dna, EnvConstraint(1.0))[0], dna.probabilities[0])


@pytest.mark.parametrize("c", [-0.1, 1.5])
def test_c_outside_unit_interval(c):
    with pytest.raises(ValueError):
        EnvConstraint(c)


def test_only_constant_retention():
    with pytest.raises(ValueError):
        EnvConstraint(0.4, kind="seasonal")


def test_uniform_open_strictly_inside():
    u = uniform_open(np.random.default_rng(0), 100000)
    assert u.min() > 0 and u.max() < 1


@pytest.mark.parametrize("p, expected", [(0.0, False), (1.0, True)])
def test_certain_probabilities(p, expected):
    assert np.all(realize([np.full(1000, p)], 3)[0] == expected)


def test_same_seed_same_mask():
    p = [np.full(500, 0.4), np.full((3, 7), 0.2)]
    a, b = realize(p, 123), realize(p, 123)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
        assert x.shape == y.shape


def test_different_seeds_differ():
    p = [np.full(1000, 0.4)]
    assert np.any(realize(p, 1)[0] != realize(p, 2)[0])


def test_mean_retained_fraction():
    n, c = 10000, 0.4
    fractions = [realize([np.full(n, c)], s)[0].mean() for s in range(1000)]
    assert abs(np.mean(fractions) - c) <= 3 * binomial_sigma(n, c)


# -- topology and repair ------------------------------------------------------------------


def dense_template(sizes):
    return nn.Architecture.full((sizes[0],), [nn.dense(a, b, "relu") for a, b in zip(sizes[:-1], sizes[1:])])


def test_empty_layer_gets_argmax_synapse():
    tmpl = dense_template((3, 1))
    dna = single_layer_dna([0.1, 0.3, 0.2])
    arch, forced, pruned, log = repair([np.zeros(3, bool)], dna, tmpl)
    np.testing.assert_array_equal(arch.masks[0], [[False, True, False]])
    assert forced == [1] and pruned == [0]
    assert log


def test_forced_tie_goes_to_lowest_index():
    dna = single_layer_dna([0.2, 0.3, 0.3])
    arch, *_ = repair([np.zeros(3, bool)], dna, dense_template((3, 1)))
    np.testing.assert_array_equal(arch.masks[0], [[False, True, False]])


def test_neuron_without_inputs_is_removed_with_outputs():
    net = uniform_dense((2, 2, 1))
    dna = encode_dna(net)
    raw = [np.array([True, True, False, False]), np.array([True, True])]  # hidden unit 1 has no inputs
    arch, forced, pruned, _ = repair(raw, dna, net.architecture)
    assert arch.masks[1].tolist() == [[True, False]]
    assert arch.alive[0].tolist() == [True, False]
    assert pruned == [0, 1]
    assert check_validity(arch) == []


def test_neuron_without_outputs_is_removed_with_inputs():
    net = uniform_dense((2, 2, 1))
    dna = encode_dna(net)
    raw = [np.ones(4, bool), np.array([True, False])]  # hidden unit 1 feeds nothing
    arch, _, pruned, _ = repair(raw, dna, net.architecture)
    assert arch.masks[0].tolist() == [[True, True], [False, False]]
    assert pruned == [2, 0]


def test_pruning_cascades_to_fixpoint():
    net = uniform_dense((1, 1, 1, 1))
    dna = encode_dna(net)
    # middle link forced back but the output side is empty everywhere else
    raw = [np.array([True]), np.array([True]), np.array([True])]
    arch, *_ = repair(raw, dna, net.architecture)
    assert nn.count_synapses(arch) == 3
    net = uniform_dense((2, 2, 2, 1))
    dna = encode_dna(net)
    raw = [np.array([1, 0, 0, 0], bool), np.array([0, 0, 0, 1], bool), np.array([1, 1], bool)]
    # unit 0 of layer 0 feeds nothing that reaches the output; everything dies
    with pytest.raises(SynthesisFailure):
        repair(raw, dna, net.architecture)


def test_conv_topology_with_skip():
    net = random_conv_net(0, keep=1.0)
    topo = Topology(net.architecture)
    # final conv reads 4 upsampled channels then 2 input channels
    feeds = topo.feeds[4]
    assert list(feeds[:4]) == [topo.offset[1] + k for k in range(4)]
    assert list(feeds[4:]) == [-1, -2]
    assert topo.is_output.sum() == 1


def test_output_fed_only_by_input_survives():
    net = random_conv_net(1, keep=1.0)
    dna = encode_dna(net)
    raw = [np.zeros(len(ix), bool) for ix in dna.indices]
    # keep only final-layer synapses on the raw input channels
    w4 = np.zeros(net.architecture.masks[4].shape, bool)
    w4[:, 4:] = True
    raw[4] = w4.ravel()[dna.indices[4]]
    raw[0][0] = True  # layers 0/1 would be forced anyway
    raw[1][0] = True
    arch, *_ = repair(raw, dna, net.architecture)
    assert arch.masks[4][:, 4:].all()
    assert not arch.masks[0].any() and not arch.masks[1].any()
    assert check_validity(arch) == []


def test_synthesis_failure_after_retries():
    # with C = 0 only forced synapses exist: layer 0 keeps a synapse into
    # hidden unit 1, layer 1 one out of hidden unit 0, so no path survives
    net = uniform_dense((2, 2, 1))
    net.architecture.masks[0][0] = False
    net.weights[0][0] = 0.0
    with pytest.raises(SynthesisFailure):
        synthesize(net, EnvConstraint(0.0), seed=0, retries=3)


# -- properties -------------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 1.0))
def test_descendant_is_valid_subset(seed, c):
    net = random_conv_net(seed % 97, keep=0.8)
    try:
        out = synthesize(net, EnvConstraint(c), seed)
    except SynthesisFailure:
        return
    arch = out.architecture
    assert check_validity(arch) == []
    assert arch.generation == net.architecture.generation + 1
    for new, old in zip(arch.masks, net.architecture.masks):
        assert not np.any(new & ~old)
    for alive, m in zip(arch.alive, arch.masks):
        if m.size:
            dead = ~alive
            assert not m[dead].any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_dense_descendant_valid(seed):
    net = random_dense_net(seed % 89, sizes=(6, 8, 8, 3), keep=0.9)
    try:
        arch = synthesize(net, EnvConstraint(0.5), seed).architecture
    except SynthesisFailure:
        return
    assert check_validity(arch) == []


def test_budget_bound_rarely_exceeded():
    net = uniform_dense((100, 100))
    n = 10000
    bound = 0.4 + 3 * binomial_sigma(n, 0.4)
    over = sum(synthesize(net, EnvConstraint(0.4), s).pre_repair_retained / n > bound for s in range(300))
    assert over <= 3


def test_retained_count_matches_poisson_binomial():
    rng = np.random.default_rng(0)
    net = uniform_dense((250, 200))
    net.weights[0][...] = rng.normal(size=(200, 250))
    p = synthesis_probabilities(encode_dna(net), EnvConstraint(0.4))[0]
    mu, sigma = p.sum(), math.sqrt((p * (1 - p)).sum())
    counts = [synthesize(net, EnvConstraint(0.4), s).pre_repair_retained for s in range(200)]
    inside = np.mean([abs(k - mu) <= 3 * sigma for k in counts])
    assert inside >= 0.97
    assert abs(np.mean(counts) - mu) <= 4 * sigma / math.sqrt(len(counts))


def test_monotone_compression_over_seeds():
    for seed in range(20):
        net = uniform_dense((40, 40, 1))  # 1,640 synapses
        counts = [nn.count_synapses(net.architecture)]
        for g in range(3):
            arch = synthesize(net, EnvConstraint(0.4), seed * 10 + g).architecture
            net = nn.initialize(arch, seed)
            counts.append(nn.count_synapses(arch))
        assert all(b < a for a, b in zip(counts, counts[1:])), counts


def test_mutation_diversity():
    net = uniform_dense((40, 40, 1))
    a = synthesize(net, EnvConstraint(0.4), 1).architecture
    b = synthesize(net, EnvConstraint(0.4), 2).architecture
    assert sum(int((x != y).sum()) for x, y in zip(a.masks, b.masks)) > 0


def test_c_one_keeps_equal_strength_network():
    net = uniform_dense((5, 4, 3))
    arch = synthesize(net, EnvConstraint(1.0), 9).architecture
    assert nn.count_synapses(arch) == nn.count_synapses(net.architecture)
