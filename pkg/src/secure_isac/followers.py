"""Hybrid-node power game.

Given the leader's broadcast, every hybrid node picks a transmit power on a
discrete grid to maximize a priced utility (secrecy reward, power cost,
leakage penalty, jamming reward, shared information bonus) under box, total
friendly-jamming, and leakage-cap constraints that couple the players.
Equilibria are approximated by deterministic Gauss-Seidel best-response
sweeps; roles are re-assigned once per slot by thresholding the achieved
secrecy rates.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .leader import Broadcast
from .link import SlotContext

log = logging.getLogger(__name__)

FEAS_TOL = 1e-12  # closed constraints: boundary points are feasible


class Role(str, Enum):
    THN = "THN"
    JHN = "JHN"


@dataclass
class NodeState:
    """One hybrid node: identity, geometry, role, power, and utility weights."""

    id: int
    position: np.ndarray
    role: Role = Role.THN
    power: float = 0.0
    p_max: float = 1.5
    eta: float = 1.0      # secrecy reward weight
    cost: float = 0.5     # power cost per watt

    def __post_init__(self):
        if not 0.0 <= self.power <= self.p_max + 1e-12:
            raise ValueError(f"node {self.id}: power {self.power} outside [0, {self.p_max}]")


@dataclass
class FeasibilitySpec:
    """Shared constraints: aggregate jamming budget, per-served-node leakage
    cap, and an optional extra coupling g(powers) <= 0."""

    p_fj_max: float = 12.0
    xi_max: float = 2e-12
    coupling: object = None

    def __post_init__(self):
        if self.p_fj_max <= 0 or self.xi_max <= 0:
            raise ValueError("all caps must be > 0")


def node_rate(u: int, powers: np.ndarray, ctx: SlotContext) -> float:
    """Secrecy rate of node u at this profile (0 when it has no stream)."""
    if u in ctx.served:
        return float(ctx.rates(powers)[ctx.served.index(u)])
    return 0.0


def hn_utility(u: int, power: float, powers: np.ndarray, roles: dict,
               broadcast: Broadcast, ctx: SlotContext, node: NodeState) -> float:
    """Priced per-node payoff at the profile (power, powers[-u]).

    Transmit-role nodes earn the secrecy reward and contribute no jamming;
    jamming-role nodes earn the jamming reward instead. Power cost, leakage
    penalty, and the shared information bonus apply to everyone.
    """
    if power < -FEAS_TOL or power > node.p_max + FEAS_TOL:
        raise ValueError(f"infeasible power {power} for node {u}")
    p = np.array(powers, dtype=float)
    p[u] = power
    if roles[u] is Role.THN:
        secrecy = node.eta * node_rate(u, p, ctx)
        jam = 0.0
    else:
        secrecy = 0.0
        jam = broadcast.pi * ctx.jam_contribution(u, p)
    leak = ctx.leakage_of_node(u, p)
    return (secrecy - node.cost * power - broadcast.tau * leak + jam
            + broadcast.kappa * ctx.info_gain)


def feasible(powers: np.ndarray, spec: FeasibilitySpec, p_maxes: np.ndarray,
             ctx: SlotContext) -> bool:
    """True iff every box bound, the aggregate budget, every leakage cap, and
    the optional coupling hold (closed constraints)."""
    p = np.asarray(powers, dtype=float)
    if np.any(p < -FEAS_TOL) or np.any(p > p_maxes + FEAS_TOL):
        return False
    if p.sum() > spec.p_fj_max + FEAS_TOL:
        return False
    # leakage is watt-scale: a relative tolerance keeps the boundary closed
    if ctx.served and np.any(ctx.leakage_at_served(p) > spec.xi_max * (1.0 + 1e-9)):
        return False
    if spec.coupling is not None and np.any(np.asarray(spec.coupling(p)) > FEAS_TOL):
        return False
    return True


def candidate_utilities(u: int, powers: np.ndarray, grid: np.ndarray,
                        broadcast: Broadcast, ctx: SlotContext,
                        spec: FeasibilitySpec, roles: dict, node: NodeState,
                        p_maxes: np.ndarray):
    """Vectorized utilities and feasibility over node u's candidate grid.

    Exactly mirrors hn_utility/feasible evaluated pointwise; the scalar
    routines stay as the reference implementation.
    """
    p = np.asarray(powers, dtype=float)
    others_sum = p.sum() - p[u]
    feas = (grid >= -FEAS_TOL) & (grid <= node.p_max + FEAS_TOL)
    feas &= others_sum + grid <= spec.p_fj_max + FEAS_TOL
    if ctx.served:
        leak_base = ctx.leakage_at_served(p) - p[u] * ctx.jam_to_thn[u]
        leak = leak_base[None, :] + grid[:, None] * ctx.jam_to_thn[u][None, :]
        feas &= np.all(leak <= spec.xi_max * (1.0 + 1e-9), axis=1)
    if spec.coupling is not None:
        trial = p.copy()
        for i, g in enumerate(grid):
            if not feas[i]:
                continue
            trial[u] = g
            feas[i] = not np.any(np.asarray(spec.coupling(trial)) > FEAS_TOL)

    leak_row = ctx.jam_to_thn[u].sum() if ctx.served else 0.0
    base = -node.cost * grid - broadcast.tau * grid * leak_row \
        + broadcast.kappa * ctx.info_gain
    if roles[u] is Role.THN:
        if u in ctx.served:
            idx = ctx.served.index(u)
            leak_base = ctx.leakage_at_served(p) - p[u] * ctx.jam_to_thn[u]
            leak_at_u = leak_base[idx] + grid * ctx.jam_to_thn[u][idx]
            sinr = ctx.sig_w[idx] / (ctx.isi_w[idx] + ctx.an_thn_w[idx]
                                     + leak_at_u + ctx.noise_w)
            legit = np.log2(1.0 + sinr)
            eve = _eve_rates_for_candidates(u, p, grid, ctx)
            rate = np.where(np.isfinite(eve), np.maximum(0.0, legit - eve), 0.0)
            secrecy = node.eta * rate
        else:
            secrecy = np.zeros_like(grid)
        values = secrecy + base
    else:
        eve_with = _eve_rates_for_candidates(u, p, grid, ctx)
        without = p.copy()
        without[u] = 0.0
        eve_without = ctx.eve_rate_max(without)
        with np.errstate(invalid="ignore"):
            diff = eve_without - eve_with
        gain = np.where(~np.isfinite(eve_with), 0.0,
                        np.where(np.isfinite(eve_without), diff, 50.0))
        contrib = np.where(grid > 0.0, len(ctx.served) * np.maximum(0.0, gain), 0.0)
        values = broadcast.pi * contrib + base
    values[~feas] = -np.inf
    return values, feas


def _eve_rates_for_candidates(u: int, powers: np.ndarray, grid: np.ndarray,
                              ctx: SlotContext) -> np.ndarray:
    """Strongest-eavesdropper rate for each candidate power of node u."""
    if ctx.num_eves == 0:
        return np.zeros_like(grid)
    jam_base = powers @ ctx.jam_to_eve - powers[u] * ctx.jam_to_eve[u]
    den = ctx.eve_an_w[None, :] + jam_base[None, :] \
        + grid[:, None] * ctx.jam_to_eve[u][None, :] + ctx.eve_noise_w
    sinr = np.full((grid.shape[0], ctx.num_eves), np.inf)
    ok = den > 0
    cap = np.broadcast_to(ctx.eve_capture_w[None, :], sinr.shape)
    sinr[ok] = cap[ok] / den[ok]
    sinr[~ok & (cap <= 0)] = 0.0
    smax = sinr.max(axis=1)
    out = np.full(grid.shape[0], np.inf)
    finite = np.isfinite(smax)
    out[finite] = np.log2(1.0 + smax[finite])
    return out


def best_response(u: int, powers: np.ndarray, grid: np.ndarray, broadcast: Broadcast,
                  ctx: SlotContext, spec: FeasibilitySpec, roles: dict,
                  nodes: dict, p_maxes: np.ndarray) -> float:
    """Utility-maximizing feasible grid power for node u, others fixed.

    Exact ties break toward lower power. An empty feasible set falls back to
    zero power with a warning.
    """
    if grid.size == 0:
        raise ValueError("empty power grid")
    values, feas = candidate_utilities(u, powers, grid, broadcast, ctx, spec,
                                       roles, nodes[u], p_maxes)
    if not feas.any():
        log.warning("node %d: no feasible grid power, falling back to 0", u)
        return 0.0
    return float(grid[int(np.argmax(values))])  # argmax takes the first (lowest) tie


@dataclass
class GneResult:
    powers: np.ndarray
    iterations: int
    gap_trace: list
    converged: bool


def equilibrium_gap(powers: np.ndarray, grids: dict, broadcast: Broadcast,
                    ctx: SlotContext, spec: FeasibilitySpec, roles: dict,
                    nodes: dict, p_maxes: np.ndarray) -> float:
    """Largest unilateral utility improvement any node can reach on its grid
    (the epsilon-equilibrium certificate, by exhaustive scan)."""
    worst = 0.0
    for u, grid in grids.items():
        current = hn_utility(u, powers[u], powers, roles, broadcast, ctx, nodes[u])
        values, feas = candidate_utilities(u, powers, grid, broadcast, ctx, spec,
                                           roles, nodes[u], p_maxes)
        if feas.any():
            worst = max(worst, float(values[feas].max()) - current)
    return worst


def gne_solve(node_list, broadcast: Broadcast, ctx: SlotContext, spec: FeasibilitySpec,
              grid_points: int = 21, tolerance: float = 1e-3,
              max_iters: int = 50) -> GneResult:
    """Gauss-Seidel best-response sweeps until the profile stops moving.

    Sweep order is ascending node id. Returns the profile, sweep count, the
    per-sweep trace of the exhaustive equilibrium gap, and a convergence flag
    (a profile-change norm <= tolerance, which on a discrete grid means an
    exact fixed point).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    nodes = {n.id: n for n in node_list}
    order = sorted(nodes)
    if order != list(range(len(order))):
        raise ValueError("node ids must be 0..K-1 and match the context rows")
    roles = {uid: nodes[uid].role for uid in order}
    p_maxes = np.array([nodes[uid].p_max for uid in order])
    grids = {uid: np.linspace(0.0, nodes[uid].p_max, grid_points) for uid in order}

    powers = np.array([nodes[uid].power for uid in order], dtype=float)
    if not feasible(powers, spec, p_maxes, ctx):
        powers = np.zeros_like(powers)

    gap_trace = []
    converged = False
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        previous = powers.copy()
        for uid in order:
            powers[uid] = best_response(uid, powers, grids[uid], broadcast, ctx,
                                        spec, roles, nodes, p_maxes)
        gap_trace.append(equilibrium_gap(powers, grids, broadcast, ctx, spec,
                                         roles, nodes, p_maxes))
        if np.linalg.norm(powers - previous) <= tolerance:
            converged = True
            break
    if not converged:
        log.warning("best-response dynamics hit the iteration cap (%d sweeps)", max_iters)
    return GneResult(powers, iterations, gap_trace, converged)


def role_switch(rates: dict, threshold: float) -> dict:
    """JHN when the equilibrium secrecy rate falls strictly below the
    threshold, THN otherwise."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return {uid: (Role.JHN if r < threshold else Role.THN) for uid, r in rates.items()}
