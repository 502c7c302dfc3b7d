"""Scenario assembly: inflow profiles, control schedules, costs, file I/O."""

import numpy as np
import pytest

from ctmflow.diagrams import FundamentalDiagram, SupplyFunction, linear_demand
from ctmflow.network import Cell, NetworkGraph, RoutingEntry, RoutingSchedule, save_network_config
from ctmflow.scenario import (
    ControlSchedule,
    CostSpec,
    InflowProfile,
    Scenario,
    load_scenario,
    save_scenario,
)
from ctmflow.simulate import evaluate_cost, simulate


def two_cell():
    cells = [Cell("r", None, "n", 0.5, is_onramp=True),
             Cell("out", "n", None, 0.5, is_offramp=True)]
    g = NetworkGraph(cells, ["car", "truck"])
    dm = {c.id: {"car": linear_demand(60.0, 0.5), "truck": linear_demand(40.0, 0.5)}
          for c in g.cells}
    sm = {c.id: SupplyFunction(unbounded=True) for c in g.cells}
    fd = FundamentalDiagram(g, dm, sm)
    routing = RoutingSchedule(g, [RoutingEntry("car", "r", "out", 0.0, 1.0),
                                  RoutingEntry("truck", "r", "out", 0.0, 1.0)])
    return g, fd, routing


# -- inflow ---------------------------------------------------------------------


def test_inflow_events_materialize():
    g, _, _ = two_cell()
    prof = InflowProfile(g, [("car", "r", 0.0, 100.0),
                             ("car", "r", 0.05, 300.0),   # switch at t = 0.05 h
                             ("truck", "r", 0.0, 40.0)])
    lam = prof.materialize(0.01, 8)
    i = g.index["r"]
    k_car, k_truck = g.commodity_index["car"], g.commodity_index["truck"]
    assert list(lam[:, k_car, i]) == [100.0] * 5 + [300.0] * 3
    assert list(lam[:, k_truck, i]) == [40.0] * 8
    assert lam[:, :, g.index["out"]].max() == 0.0


def test_inflow_validation():
    g, _, _ = two_cell()
    with pytest.raises(ValueError, match=">= 0"):
        InflowProfile(g, [("car", "r", 0.0, -5.0)])
    with pytest.raises(ValueError, match="non-onramp"):
        InflowProfile(g, [("car", "out", 0.0, 5.0)])
    with pytest.raises(ValueError, match="unknown commodity"):
        InflowProfile(g, [("bus", "r", 0.0, 5.0)])
    with pytest.raises(ValueError, match="unknown cell"):
        InflowProfile(g, [("car", "zzz", 0.0, 5.0)])
    # zero inflow on a non-onramp is harmless
    InflowProfile(g, [("car", "out", 0.0, 0.0)])


def test_inflow_array_form():
    g, _, _ = two_cell()
    arr = np.zeros((4, 2, 2))
    arr[:, 0, g.index["r"]] = [100.0, 200.0, 300.0, 400.0]
    prof = InflowProfile.from_array(g, arr)
    np.testing.assert_array_equal(prof.materialize(0.01, 3), arr[:3])
    with pytest.raises(ValueError, match="covers 4 steps"):
        prof.materialize(0.01, 9)
    bad = arr.copy(); bad[0, 0, g.index["out"]] = 1.0
    with pytest.raises(ValueError, match="non-onramp"):
        InflowProfile.from_array(g, bad)
    with pytest.raises(ValueError, match=">= 0"):
        InflowProfile.from_array(g, -arr)
    with pytest.raises(ValueError, match="must be"):
        InflowProfile.from_array(g, np.zeros((4, 3, 2)))
    with pytest.raises(ValueError, match="events or an array"):
        InflowProfile(g, [("car", "r", 0.0, 1.0)], array=arr)


# -- control ----------------------------------------------------------------------


def test_control_schedule_events():
    g, _, _ = two_cell()
    ctl = ControlSchedule(g, [("car", "r", 0.0, 0.5),
                              ("car", "r", 0.02, 0.8)])
    a = ctl.materialize(0.01, 4)
    i = g.index["r"]
    assert list(a[:, 0, i]) == [0.5, 0.5, 0.8, 0.8]
    assert a[:, 1, :].min() == 1.0  # unmentioned commodity stays uncontrolled
    assert not ctl.is_dense

    assert ControlSchedule.uncontrolled(g).materialize(0.01, 3).min() == 1.0
    with pytest.raises(ValueError, match=r"in \[0, 1\]"):
        ControlSchedule(g, [("car", "r", 0.0, 1.2)])


def test_control_schedule_array_and_restrict():
    g, _, _ = two_cell()
    rng = np.random.default_rng(0)
    arr = rng.uniform(0.2, 1.0, size=(5, 2, 2))
    ctl = ControlSchedule.from_array(g, arr)
    assert ctl.is_dense
    np.testing.assert_array_equal(ctl.materialize(0.01, 5), arr)
    with pytest.raises(ValueError, match="covers 5 steps"):
        ctl.materialize(0.01, 6)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        ControlSchedule.from_array(g, arr + 1.0)

    # restrict keeps the named commodity, resets the rest to 1
    only_car = ctl.restrict(["car"])
    a = only_car.materialize(0.01, 5)
    np.testing.assert_array_equal(a[:, 0, :], arr[:, 0, :])
    assert a[:, 1, :].min() == 1.0
    with pytest.raises(ValueError, match="unknown commodities"):
        ctl.restrict(["bus"])

    # event-form restrict drops other commodities' events
    ev = ControlSchedule(g, [("car", "r", 0.0, 0.5), ("truck", "r", 0.0, 0.3)])
    a = ev.restrict(["truck"]).materialize(0.01, 2)
    assert a[0, g.commodity_index["car"], g.index["r"]] == 1.0
    assert a[0, g.commodity_index["truck"], g.index["r"]] == 0.3


# -- costs ------------------------------------------------------------------------


def test_cost_linear_weights():
    g, _, _ = two_cell()
    xw, zw = CostSpec.total_travel_time().weights(g)
    assert list(xw) == [1.0, 1.0] and list(zw) == [0.0, 0.0]
    xw, zw = CostSpec.total_travel_distance().weights(g)
    assert list(xw) == [0.0, 0.0] and list(zw) == [-0.5, -0.5]
    with pytest.raises(ValueError, match="volume weights"):
        CostSpec(x_weight=-1.0).weights(g)
    with pytest.raises(ValueError, match="outflow weights"):
        CostSpec(z_weight=1.0).weights(g)
    with pytest.raises(ValueError, match="unknown symbolic"):
        CostSpec(z_weight="-len").weights(g)


def test_cost_piecewise_validation_and_eval():
    with pytest.raises(ValueError, match=r"\(0, 0\)"):
        CostSpec(x_pwl=[(1.0, 0.0), (2.0, 1.0)])
    with pytest.raises(ValueError, match="convex"):
        CostSpec(x_pwl=[(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)])  # slopes 2 then 1
    with pytest.raises(ValueError, match="non-decreasing in volume"):
        CostSpec(x_pwl=[(0.0, 0.0), (1.0, -1.0), (2.0, 0.0)])
    with pytest.raises(ValueError, match="non-increasing in outflow"):
        CostSpec(z_pwl=[(0.0, 0.0), (1.0, 1.0)])
    with pytest.raises(ValueError, match="strictly increasing"):
        CostSpec(x_pwl=[(0.0, 0.0), (0.0, 1.0)])
    with pytest.raises(ValueError, match="two breakpoints"):
        CostSpec(x_pwl=[(0.0, 0.0)])

    # queue penalty: slope 1 up to x = 2, slope 3 beyond
    spec = CostSpec(x_pwl=[(0.0, 0.0), (2.0, 2.0), (4.0, 8.0)])
    f = spec.x_pwl
    assert f(1.0) == pytest.approx(1.0)
    assert f(2.0) == pytest.approx(2.0)
    assert f(3.0) == pytest.approx(5.0)     # 2 + 3*(3-2)
    assert f(10.0) == pytest.approx(26.0)   # last segment extends


def test_cost_config_round_trip():
    for spec in (CostSpec.total_travel_time(), CostSpec.total_travel_distance()):
        again = CostSpec.from_config(spec.to_config())
        assert again.name == spec.name
    pwl = CostSpec(x_weight=0.5, x_pwl=[(0.0, 0.0), (2.0, 2.0), (4.0, 8.0)])
    again = CostSpec.from_config(pwl.to_config())
    assert again.x_pwl(3.0) == pytest.approx(5.0)
    assert again.to_config() == pwl.to_config()
    with pytest.raises(ValueError, match="unknown cost kind"):
        CostSpec.from_config({"kind": "latency"})


def test_cost_restrict_selects_cells():
    g, _, _ = two_cell()
    spec = CostSpec(x_weight=np.array([2.0, 3.0]))
    sub = spec.restrict(np.array([1]))
    # a 1-cell graph to expand against
    g1 = NetworkGraph([Cell("c", None, None, 1.0, is_offramp=True)], ["car"])
    xw, _ = sub.weights(g1)
    assert list(xw) == [3.0]


# -- scenario validation ------------------------------------------------------------


def scenario_kwargs():
    g, fd, routing = two_cell()
    return dict(graph=g, diagram=fd, routing=routing,
                inflow=InflowProfile(g, [("car", "r", 0.0, 100.0)]),
                x0=np.zeros((2, 2)), h=1.0 / 120.0, n_steps=10,
                cost=CostSpec.total_travel_time())


def test_scenario_validation():
    kw = scenario_kwargs()
    Scenario(**kw)  # baseline is fine

    bad = dict(kw); bad["x0"] = np.zeros((2, 3))
    with pytest.raises(ValueError, match="initial state must be"):
        Scenario(**bad)
    bad = dict(kw); bad["x0"] = -np.ones((2, 2))
    with pytest.raises(ValueError, match="nonnegative"):
        Scenario(**bad)
    bad = dict(kw); bad["n_steps"] = 0
    with pytest.raises(ValueError, match="horizon"):
        Scenario(**bad)
    bad = dict(kw); bad["h"] = 0.0
    with pytest.raises(ValueError, match="positive"):
        Scenario(**bad)
    # the traversal bound: min L/vff = 0.5/60 h; anything above is rejected
    bad = dict(kw); bad["h"] = 0.5 / 60.0 + 1e-6
    with pytest.raises(ValueError, match="exceeds the stability bound"):
        Scenario(**bad)
    ok = dict(kw); ok["h"] = 0.5 / 60.0  # exactly at the bound is allowed
    Scenario(**ok)

    g = kw["graph"]
    bad = dict(kw)
    bad["routing"] = RoutingSchedule(g, [RoutingEntry("car", "r", "out", 0.0, 0.5),
                                         RoutingEntry("truck", "r", "out", 0.0, 1.0)])
    with pytest.raises(ValueError, match="row sums to 0.5"):
        Scenario(**bad)


def test_with_control_and_times():
    kw = scenario_kwargs()
    sc = Scenario(**kw)
    ctl = ControlSchedule(sc.graph, [("car", "r", 0.0, 0.5)])
    sc2 = sc.with_control(ctl, name="metered")
    assert sc2.control is ctl and sc2.name == "metered"
    assert sc.control is None  # original untouched
    np.testing.assert_allclose(sc.times, np.arange(11) / 120.0)


# -- scenario file I/O ----------------------------------------------------------------


def test_scenario_file_round_trip(tmp_path):
    kw = scenario_kwargs()
    g, fd, routing = kw["graph"], kw["diagram"], kw["routing"]
    x0 = np.array([[2.0, 0.0], [0.5, 1.0]])
    ctl = ControlSchedule(g, [("car", "r", 0.0, 0.6), ("car", "r", 0.05, 0.9)])
    sc = Scenario(g, fd, routing, kw["inflow"], x0, kw["h"], 12,
                  CostSpec.total_travel_time(), control=ctl, name="demo")

    save_network_config(tmp_path / "network.json", g, fd, routing)
    save_scenario(tmp_path / "scenario.json", sc, "network.json")
    sc2 = load_scenario(tmp_path / "scenario.json")

    assert sc2.name == "demo"
    assert sc2.n_steps == 12 and sc2.h == pytest.approx(kw["h"])
    np.testing.assert_allclose(sc2.x0, x0)
    np.testing.assert_array_equal(sc2.control.materialize(sc.h, 12),
                                  ctl.materialize(sc.h, 12))
    # identical dynamics after the round trip
    r1, r2 = simulate(sc), simulate(sc2)
    np.testing.assert_allclose(r2.states, r1.states, atol=1e-12)
    assert evaluate_cost(r2) == pytest.approx(evaluate_cost(r1), rel=1e-12)


def test_scenario_file_errors(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{}")
    with pytest.raises(ValueError, match="missing key"):
        load_scenario(p)
    p.write_text('{"network": "net.json", "horizon_steps": 5}')
    with pytest.raises(ValueError, match="step_hours/step_seconds"):
        load_scenario(p)
    p.write_text('{"network": "net.json", "horizon_steps": 5, '
                 '"step_hours": 0.01, "step_seconds": 36}')
    with pytest.raises(ValueError, match="step_hours/step_seconds"):
        load_scenario(p)


def test_scenario_step_seconds(tmp_path):
    kw = scenario_kwargs()
    g, fd, routing = kw["graph"], kw["diagram"], kw["routing"]
    save_network_config(tmp_path / "network.json", g, fd, routing)
    (tmp_path / "s.json").write_text(
        '{"network": "network.json", "horizon_steps": 3, "step_seconds": 18,'
        ' "inflow": [{"commodity": "car", "cell": "r", "rate_vph": 50.0}]}')
    sc = load_scenario(tmp_path / "s.json")
    assert sc.h == pytest.approx(18.0 / 3600.0)
    assert sc.cost.name == "ttt"  # the default
    assert sc.inflow_array()[0, 0, sc.graph.index["r"]] == 50.0
