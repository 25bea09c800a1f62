import math

import numpy as np
import pytest

from saddlenet.oracle import (
    NoFeasiblePoint,
    OracleError,
    dump_result,
    grid_oracle,
    load_result,
    solve,
    subgradient_oracle,
)
from saddlenet.problem import FunctionProblem, ball, box
from saddlenet.scenarios import make_scenario

from _problems import random_static


def _fp(dim, cost, grad, constraints=None, jac=None, counts=None, **kw):
    base = dict(
        action_dim=dim, agent_count=1, action_set=box(-np.ones(dim), np.ones(dim)), horizon=1.0,
        time_step=0.1, gamma=0.0, lipschitz_cost=2.0, lipschitz_constraint=1.0, cost_floor_gap=1.0,
    )
    base.update(kw)
    return FunctionProblem(cost=cost, cost_subgradient=grad, constraints=constraints,
                           constraint_jacobian=jac, constraint_counts=counts, **base)


def _active_constraint_problem():
    return _fp(1, lambda i, t, x: float(x[0] ** 2), lambda i, t, x: 2 * x,
               lambda i, t, x: [0.5 - x[0]], lambda i, t, x: [[-1.0]], [1])


def test_grid_active_constraint():
    r = grid_oracle(_active_constraint_problem(), 201)
    assert r.xstar == pytest.approx([0.5], abs=1e-12)
    assert r.method == "grid" and r.worst_violation <= 1e-6
    assert r.objective_integral == pytest.approx(0.25, rel=1e-9)


def test_grid_interior_optimum():
    p = _fp(2, lambda i, t, x: 0.5 * float(((x - 0.3) ** 2).sum()), lambda i, t, x: x - 0.3)
    r = grid_oracle(p, 201)
    assert np.allclose(r.xstar, [0.3, 0.3], atol=1e-12)


def test_grid_ties_break_lexicographically():
    p = _fp(2, lambda i, t, x: 0.0, lambda i, t, x: np.zeros(2))
    assert np.array_equal(grid_oracle(p, 5).xstar, [-1.0, -1.0])


def _static_logistic(tmp_path, delta=0.1):
    rows = ["t,agent,label,z_0,z_1", "0,0,1,1.0,0.5", "0.5,0,-1,-0.5,-1.0", "0.75,0,1,1.0,-0.2"]
    path = tmp_path / "static.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return make_scenario("sparse_classifier_csv", {
        "agents": 1, "path": str(path), "horizon": 1.0, "time_step": 0.25, "delta": delta, "box_bound": 4.0,
    }, 0)[0]


def test_grid_logistic_resolutions_agree_within_a_cell(tmp_path):
    p = _static_logistic(tmp_path)
    coarse, fine = grid_oracle(p, 101), grid_oracle(p, 201)
    assert np.abs(coarse.xstar - fine.xstar).max() <= coarse.meta["cell"] + 1e-12
    assert fine.worst_violation <= 1e-6


def test_grid_refinement_does_not_get_worse():
    rng = np.random.default_rng(1)
    for _ in range(3):
        p = random_static(rng)
        r1, r2 = grid_oracle(p, 51), grid_oracle(p, 101)
        slack = p.lipschitz_cost * p.agent_count * r1.meta["cell"] * math.sqrt(2) * p.horizon
        assert r2.objective_integral <= r1.objective_integral + slack


def test_grid_no_feasible_point():
    p = _fp(1, lambda i, t, x: 0.0, lambda i, t, x: np.zeros(1), lambda i, t, x: [2.0 - x[0]],
            lambda i, t, x: [[-1.0]], [1])
    with pytest.raises(NoFeasiblePoint) as info:
        grid_oracle(p, 11)
    assert info.value.best_violation == pytest.approx(1.0)


def test_grid_rejects_unsupported_problems():
    with pytest.raises(OracleError):
        grid_oracle(_fp(4, lambda i, t, x: 0.0, lambda i, t, x: np.zeros(4)), 3)
    with pytest.raises(OracleError):
        grid_oracle(_fp(2, lambda i, t, x: 0.0, lambda i, t, x: np.zeros(2), action_set=ball([0, 0], 1.0)), 3)
    with pytest.raises(OracleError):
        grid_oracle(_active_constraint_problem(), 1)


def test_subgradient_matches_grid_on_static_instances():
    rng = np.random.default_rng(2)
    for _ in range(3):
        p = random_static(rng)
        g, s = grid_oracle(p, 401), subgradient_oracle(p, 2000)
        assert np.linalg.norm(g.xstar - s.xstar) <= 1e-2
        assert abs(g.objective_integral - s.objective_integral) <= 1e-2 * abs(g.objective_integral)


# minimizers of random_static(default_rng(5)) instances from scipy's SLSQP at ftol 1e-15
SLSQP_REFERENCE = [
    ([-0.6274319324543004, -0.11830249076135092], 2.407557349402221),
    ([-0.47288463808168385, 0.6784191824632158], 0.6163276637948653),
    ([-0.18034655596945892, -0.36175313962739414], 0.2982114538938258),
    ([-0.521333619402946, -0.33882281885136967], 0.8722000009060189),
    ([0.1575886108168156, 0.018724196995809687], 0.37391302247983493),
]


def test_subgradient_matches_independent_solver():
    rng = np.random.default_rng(5)
    for x_ref, obj_ref in SLSQP_REFERENCE:
        r = subgradient_oracle(random_static(rng), 2000)
        assert np.linalg.norm(r.xstar - x_ref) <= 1e-3
        assert r.objective_integral == pytest.approx(obj_ref, rel=1e-4)
        assert r.worst_violation <= 1e-6


def test_subgradient_feasibility_problem_with_witness():
    p = make_scenario("linear_feasibility", {"agents": 3, "n": 3, "horizon": 2.0, "time_step": 0.1}, 0)[0]
    r = subgradient_oracle(p, 300, x0=np.full(3, 0.9))
    assert r.worst_violation <= 1e-3


def test_subgradient_zero_budget_returns_projected_start():
    p = _active_constraint_problem()
    r = subgradient_oracle(p, 0, x0=[3.0])
    assert r.xstar == pytest.approx([1.0])
    assert r.meta["iterations"] == 0 and r.meta["feasible"]
    with pytest.raises(OracleError):
        subgradient_oracle(p, -1)


def test_subgradient_is_idempotent():
    p = random_static(np.random.default_rng(3))
    a, b = subgradient_oracle(p, 500), subgradient_oracle(p, 500)
    assert a.xstar.tobytes() == b.xstar.tobytes() and a.meta == b.meta


def test_solve_dispatch():
    p = random_static(np.random.default_rng(4))
    assert solve(p).method == "grid"
    assert solve(p, method="subgradient", iterations=50).method == "subgradient"
    big = make_scenario("linear_feasibility", {"n": 3, "horizon": 1.0, "time_step": 0.1}, 0)[0]
    assert solve(big, iterations=20).method == "subgradient"
    with pytest.raises(OracleError):
        solve(p, method="simplex")


def test_result_round_trip(tmp_path):
    r = grid_oracle(random_static(np.random.default_rng(5)), 51)
    dump_result(r, tmp_path / "oracle.out", {"agents": 2})
    back, ctx = load_result(tmp_path / "oracle.out")
    assert np.array_equal(back.xstar, r.xstar) and back.objective_integral == r.objective_integral
    assert back.meta == r.meta and ctx == {"agents": 2}


def test_feasible_scenarios_give_feasible_benchmarks():
    p = make_scenario("quadratic_tracking", {"horizon": 2.0}, 0)[0]
    r = grid_oracle(p, 101)
    assert r.worst_violation <= 1e-6
    assert float(p.constraint_series(p.sample_times(), r.xstar).max()) <= 1e-6
