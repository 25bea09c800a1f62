"""Small vectorized problems shared by several test modules."""

import numpy as np

from saddlenet.problem import ProblemSpec, box


class StaticQuadratic(ProblemSpec):
    """``f0i = 0.5 |x - c_i|^2`` with static half-planes ``a_r . x <= b_r``.

    ``owners`` must be sorted: rows are stored agent by agent.
    """

    def __init__(self, centers, normals, offsets, owners, bound=1.0, horizon=1.0, time_step=0.1, gamma=0.1):
        self.c = np.asarray(centers, float)
        self.A = np.asarray(normals, float).reshape(-1, self.c.shape[1])
        self.b = np.asarray(offsets, float).reshape(-1)
        N, n = self.c.shape
        counts = np.bincount(np.asarray(owners, int), minlength=N) if len(owners) else np.zeros(N, int)
        super().__init__(
            action_dim=n,
            agent_count=N,
            constraint_counts=counts,
            action_set=box(-bound * np.ones(n), bound * np.ones(n)),
            horizon=horizon,
            time_step=time_step,
            gamma=gamma,
            lipschitz_cost=2 * bound * np.sqrt(n) + float(np.abs(self.c).max(initial=0)) * np.sqrt(n),
            lipschitz_constraint=float(np.linalg.norm(self.A, axis=1).max(initial=1.0)),
            cost_floor_gap=1.0,
            feasible_witness=np.zeros(n) if np.all(self.b > 0) else None,
        )

    def cost_matrix(self, t, P):
        d = np.asarray(P, float)[None] - self.c[:, None]
        return 0.5 * (d * d).sum(-1)

    def constraint_matrix(self, t, P):
        return self.A @ np.asarray(P, float).T - self.b[:, None]

    def _cost(self, i, t, x):
        return 0.5 * float(((np.asarray(x) - self.c[i]) ** 2).sum())

    def _constraints(self, i, t, x):
        return (self.A @ np.asarray(x) - self.b)[self.agent_rows(i)]

    def _cost_subgradient(self, i, t, x):
        return np.asarray(x, float) - self.c[i]

    def _constraint_jacobian(self, i, t, x):
        return self.A[self.agent_rows(i)]


def random_static(rng, agents=2, n=2, rows=3):
    A = rng.normal(size=(rows, n))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    return StaticQuadratic(
        centers=rng.uniform(-1.5, 1.5, (agents, n)),
        normals=A,
        offsets=rng.uniform(0.1, 0.6, rows),
        owners=np.sort(np.arange(rows) % agents),
    )
