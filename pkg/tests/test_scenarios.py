import math

import numpy as np
import pytest

from offroute import (PRESETS, Linear, ParamError, Queue, default_init,
                      gen_topology, propagate, read_edge_list,
                      sample_instance, sample_small_instance, validate,
                      write_edge_list)
from offroute.scenarios import _rng, _truncated_exp


def test_preset_table_values():
    p = PRESETS["connected_er"]
    assert (p.num_nodes, p.num_edges, p.num_tasks, p.sources_per_task) == \
        (20, 40, 15, 5)
    assert (p.link_kind, p.link_mean, p.comp_kind, p.comp_mean) == \
        ("queue", 10, "queue", 12)
    assert p.num_types == 5 and p.rate_min == 0.5 and p.rate_max == 1.5
    sw = PRESETS["sw_queue"]
    assert (sw.num_nodes, sw.num_edges, sw.num_tasks, sw.sources_per_task) == \
        (100, 320, 120, 10)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_instances_match_counts_and_start_finite(name):
    preset = PRESETS[name]
    spec, tasks = sample_instance(name, seed=0)
    assert spec.num_nodes == preset.num_nodes
    assert len(spec.links) == 2 * preset.num_edges
    assert len(tasks.tasks) == preset.num_tasks
    assert len(set(tasks.tasks)) == preset.num_tasks
    per_task = {}
    for (i, task), rate in tasks.input_rates.items():
        per_task.setdefault(task, []).append(rate)
        assert preset.rate_min <= rate <= preset.rate_max
    assert all(len(v) == preset.sources_per_task for v in per_task.values())
    for (i, m), w in spec.comp_weight.items():
        assert 1.0 <= w <= 5.0
    assert validate(spec, tasks) == []
    start = default_init(spec, tasks)
    assert math.isfinite(propagate(spec, tasks, start).total)


def test_same_seed_is_bit_identical():
    a_spec, a_tasks = sample_instance("abilene", 7)
    b_spec, b_tasks = sample_instance("abilene", 7)
    assert a_spec.links == b_spec.links
    assert a_spec.link_cost == b_spec.link_cost
    assert a_spec.comp_cost == b_spec.comp_cost
    assert a_spec.comp_weight == b_spec.comp_weight
    assert a_tasks.tasks == b_tasks.tasks
    assert a_tasks.input_rates == b_tasks.input_rates
    assert a_tasks.result_size == b_tasks.result_size
    c_spec, _ = sample_instance("abilene", 8)
    assert c_spec.link_cost != a_spec.link_cost


def test_truncated_exponential_mean_shifts_up():
    rng = _rng(0, 99)
    draws = _truncated_exp(rng, 0.5, 0.1, 5.0, 10000)
    assert draws.min() >= 0.1 and draws.max() <= 5.0
    assert 0.45 <= draws.mean() <= 0.75


def test_topologies_hit_exact_budgets():
    n, edges = gen_topology("balanced_tree", 15)
    assert n == 15 and len(edges) == 14
    n, edges = gen_topology("connected_er", 20, 40, seed=3)
    assert len(edges) == 40
    assert all((i, i + 1) in edges for i in range(19))  # chain backbone
    n, edges = gen_topology("sw", 100, 320, seed=1)
    assert n == 100 and len(edges) == 320
    n, edges = gen_topology("fog", 19, 30)
    assert len(edges) == 30
    for name, (nn, ee) in {"abilene": (11, 14), "lhc": (16, 31),
                           "geant": (22, 33)}.items():
        n, edges = gen_topology(name, nn)
        assert n == nn and len(edges) == ee
        und = {(min(i, j), max(i, j)) for i, j in edges}
        assert len(und) == ee  # no duplicate pairs


def test_gen_topology_rejects_impossible_budgets():
    with pytest.raises(ParamError):
        gen_topology("connected_er", 5, 3, seed=0)
    with pytest.raises(ParamError):
        gen_topology("abilene", 12)


def test_edge_list_round_trip():
    n, edges = gen_topology("geant", 22)
    text = write_edge_list(n, edges)
    n2, edges2 = read_edge_list(text)
    assert n2 == n and edges2 == edges


def test_sw_variants_share_topology_but_not_costs():
    a, _ = sample_instance("sw_linear", 4)
    b, _ = sample_instance("sw_queue", 4)
    assert a.links == b.links
    assert all(isinstance(fn, Linear) for fn in a.link_cost.values())
    assert all(isinstance(fn, Queue) for fn in b.link_cost.values())


def test_rate_scale_and_result_ratio_overrides():
    base_spec, base = sample_instance("abilene", 2)
    _, scaled = sample_instance("abilene", 2, rate_scale=2.0)
    for key, rate in base.input_rates.items():
        assert scaled.input_rates[key] == pytest.approx(2 * rate)
    _, pinned = sample_instance("abilene", 2, result_ratio=0.2)
    assert all(v == 0.2 for v in pinned.result_size.values())


def test_small_instances_are_valid_and_feasible():
    for seed in range(6):
        spec, tasks = sample_small_instance(seed)
        assert spec.num_nodes <= 6 and tasks.num_tasks <= 2
        assert validate(spec, tasks) == []
        start = default_init(spec, tasks)
        assert math.isfinite(propagate(spec, tasks, start).total)
