"""Exact transportation solver: primal network simplex on integer data.

Solves  min sum_ij c_ij x_ij  s.t.  sum_j x_ij = s_i,  sum_i x_ij = d_j,
x >= 0  on the complete bipartite graph, with 64-bit integer costs and
supplies.  Exactness and determinism come from the all-integer pivoting;
float inputs are scaled on the way in (see ``solve_transport``).

Implementation notes
--------------------
* Big-M artificial arcs attach every node to a root; M exceeds any simple
  real path cost, so artificial flow is zero at optimality.
* Entering arc: block search over real arcs (most negative reduced cost
  within the first block that has one).
* Leaving arc: last blocking arc encountered traversing the pivot cycle in
  the push direction starting from the apex.  This keeps the basis strongly
  feasible (every zero-flow tree arc points toward the root), which rules
  out cycling on degenerate instances such as uniform weights.
* Only tree arcs carry flow (lower bounds are 0 and arcs are uncapacitated),
  so flow is stored per node on its parent arc.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .exceptions import SolverFailure

__all__ = ["solve_transport", "COST_SCALE_BITS"]

COST_SCALE_BITS = 40  # cost quantization: |dcost| <= max_cost * 2**-40 per unit mass
_MASS_SCALE = 1 << 52  # within float64's exact-integer range, so w * SCALE floors safely

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_INFEASIBLE = 2
STATUS_PIVOT_LIMIT = 3


@njit(cache=True, nogil=True)
def _solve_int(cost, supply, demand):  # pragma: no cover - exercised via wrapper
    ns = supply.shape[0]
    nt = demand.shape[0]
    n_nodes = ns + nt
    root = n_nodes
    n_real = ns * nt

    max_c = np.int64(0)
    for i in range(ns):
        for j in range(nt):
            if cost[i, j] > max_c:
                max_c = cost[i, j]
    big_m = np.int64(1) + max_c * np.int64(n_nodes)

    parent = np.empty(n_nodes + 1, dtype=np.int64)
    pred_arc = np.empty(n_nodes + 1, dtype=np.int64)
    pred_dir = np.empty(n_nodes + 1, dtype=np.int64)  # +1: arc node->parent
    tree_flow = np.zeros(n_nodes + 1, dtype=np.int64)
    pi = np.zeros(n_nodes + 1, dtype=np.int64)
    depth = np.zeros(n_nodes + 1, dtype=np.int64)
    first_child = np.full(n_nodes + 1, -1, dtype=np.int64)
    next_sib = np.full(n_nodes + 1, -1, dtype=np.int64)
    prev_sib = np.full(n_nodes + 1, -1, dtype=np.int64)

    parent[root] = -1
    pred_arc[root] = -1
    pred_dir[root] = 0
    for v in range(n_nodes):
        parent[v] = root
        depth[v] = 1
        # push-front into root's child list
        old = first_child[root]
        first_child[root] = v
        next_sib[v] = old
        prev_sib[v] = -1
        if old >= 0:
            prev_sib[old] = v
        if v < ns:
            pred_arc[v] = n_real + v
            pred_dir[v] = 1  # source -> root
            tree_flow[v] = supply[v]
            pi[v] = big_m
        else:
            pred_arc[v] = n_real + v
            pred_dir[v] = -1  # root -> sink
            tree_flow[v] = demand[v - ns]
            pi[v] = -big_m

    n_arcs = n_real + n_nodes  # real arcs then one artificial arc per node
    block = np.int64(np.sqrt(n_arcs)) + 1
    if block < 64:
        block = 64
    if block > n_arcs:
        block = n_arcs

    path_u = np.empty(n_nodes + 2, dtype=np.int64)
    path_v = np.empty(n_nodes + 2, dtype=np.int64)
    stack = np.empty(n_nodes + 2, dtype=np.int64)

    max_pivots = 500 * (n_nodes + 10) + 100000
    next_arc = 0
    status = STATUS_PIVOT_LIMIT

    for _pivot in range(max_pivots):
        # --- entering arc: block search over all arcs (artificial included) ---
        best_rc = np.int64(0)
        best_a = np.int64(-1)
        scanned = 0
        a = next_arc
        while scanned < n_arcs:
            steps = block
            if steps > n_arcs - scanned:
                steps = n_arcs - scanned
            for _ in range(steps):
                if a < n_real:
                    i = a // nt
                    j = a - i * nt
                    rc = cost[i, j] - pi[i] + pi[ns + j]
                else:
                    z = a - n_real
                    if z < ns:
                        rc = big_m - pi[z] + pi[root]
                    else:
                        rc = big_m - pi[root] + pi[z]
                if rc < best_rc:
                    best_rc = rc
                    best_a = a
                a += 1
                if a == n_arcs:
                    a = 0
            scanned += steps
            if best_a >= 0:
                break
        if best_a < 0:
            status = STATUS_OPTIMAL
            break  # dual feasible: optimal
        next_arc = a
        if best_a < n_real:
            u = best_a // nt
            v = ns + (best_a - u * nt)
        else:
            z = best_a - n_real
            if z < ns:
                u = z
                v = root
            else:
                u = root
                v = z

        # --- pivot cycle: join u -> v with the tree path v ~> apex ~> u ---
        nu_len = 0
        nv_len = 0
        x = u
        y = v
        dx = depth[x]
        dy = depth[y]
        while dx > dy:
            path_u[nu_len] = x
            nu_len += 1
            x = parent[x]
            dx -= 1
        while dy > dx:
            path_v[nv_len] = y
            nv_len += 1
            y = parent[y]
            dy -= 1
        while x != y:
            path_u[nu_len] = x
            nu_len += 1
            path_v[nv_len] = y
            nv_len += 1
            x = parent[x]
            y = parent[y]
        # x == y is the apex; path_u holds u..(child of apex), same for v.

        # --- leaving arc: min residual, last blocker in push direction ---
        # Push direction: apex -> u side (downward), entering arc, v -> apex.
        inf = np.int64(1) << 62
        delta = inf
        leave_node = np.int64(-1)
        leave_on_u_side = True
        for k in range(nu_len - 1, -1, -1):  # apex side first
            z = path_u[k]
            if pred_dir[z] == 1:  # arc z->parent opposes downward push
                bound = tree_flow[z]
                if bound <= delta:
                    delta = bound
                    leave_node = z
                    leave_on_u_side = True
        for k in range(nv_len):
            z = path_v[k]
            if pred_dir[z] == -1:  # arc parent->z opposes upward push
                bound = tree_flow[z]
                if bound <= delta:
                    delta = bound
                    leave_node = z
                    leave_on_u_side = False
        if delta >= inf:
            status = STATUS_UNBOUNDED
            break

        # --- apply flow change around the cycle ---
        if delta > 0:
            for k in range(nu_len):
                z = path_u[k]
                tree_flow[z] -= pred_dir[z] * delta
            for k in range(nv_len):
                z = path_v[k]
                tree_flow[z] += pred_dir[z] * delta

        # --- tree update: re-root the detached subtree at w, attach via enter arc ---
        w = u if leave_on_u_side else v
        rc_enter = best_rc
        # potential shift for the subtree that moves
        shift = rc_enter if leave_on_u_side else -rc_enter

        # reverse parent pointers along w -> ... -> leave_node
        plen = 0
        z = w
        while True:
            stack[plen] = z
            plen += 1
            if z == leave_node:
                break
            z = parent[z]
        # record old links before overwriting
        for k in range(plen - 1, 0, -1):
            child = stack[k - 1]
            par = stack[k]
            # par's new parent becomes child, via child's old pred arc reversed
            arc_k = pred_arc[child]
            dir_k = pred_dir[child]
            fl_k = tree_flow[child]
            # detach par from its current parent's child list
            pp = parent[par]
            if pp >= 0:
                if prev_sib[par] >= 0:
                    next_sib[prev_sib[par]] = next_sib[par]
                else:
                    first_child[pp] = next_sib[par]
                if next_sib[par] >= 0:
                    prev_sib[next_sib[par]] = prev_sib[par]
            parent[par] = child
            pred_arc[par] = arc_k
            pred_dir[par] = -dir_k
            tree_flow[par] = fl_k
            # attach par to child's list
            old = first_child[child]
            first_child[child] = par
            next_sib[par] = old
            prev_sib[par] = -1
            if old >= 0:
                prev_sib[old] = par

        # detach w from its old parent list
        pp = parent[w]
        if pp >= 0:
            if prev_sib[w] >= 0:
                next_sib[prev_sib[w]] = next_sib[w]
            else:
                first_child[pp] = next_sib[w]
            if next_sib[w] >= 0:
                prev_sib[next_sib[w]] = prev_sib[w]
        other = v if leave_on_u_side else u
        parent[w] = other
        pred_arc[w] = best_a
        pred_dir[w] = 1 if w == u else -1
        tree_flow[w] = delta
        old = first_child[other]
        first_child[other] = w
        next_sib[w] = old
        prev_sib[w] = -1
        if old >= 0:
            prev_sib[old] = w

        # --- refresh potentials and depths across the moved subtree ---
        top = 0
        stack[top] = w
        top += 1
        while top > 0:
            top -= 1
            z = stack[top]
            pi[z] += shift
            depth[z] = depth[parent[z]] + 1
            c = first_child[z]
            while c >= 0:
                stack[top] = c
                top += 1
                c = next_sib[c]

    # artificial arcs must end up empty
    if status == STATUS_OPTIMAL:
        for z in range(n_nodes):
            if pred_arc[z] >= n_real and tree_flow[z] != 0:
                status = STATUS_INFEASIBLE
                break

    # harvest positive flows on real tree arcs
    count = 0
    for z in range(n_nodes):
        if pred_arc[z] < n_real and tree_flow[z] > 0:
            count += 1
    rows = np.empty(count, dtype=np.int64)
    cols = np.empty(count, dtype=np.int64)
    vals = np.empty(count, dtype=np.int64)
    k = 0
    for z in range(n_nodes):
        arc_z = pred_arc[z]
        if arc_z < n_real and tree_flow[z] > 0:
            rows[k] = arc_z // nt
            cols[k] = arc_z - rows[k] * nt
            vals[k] = tree_flow[z]
            k += 1
    return status, rows, cols, vals


def _integer_masses(weights: np.ndarray, total: int) -> np.ndarray:
    """Scale nonnegative weights (sum 1) to int64 summing exactly to ``total``.

    Largest-remainder rounding; per-atom distortion is below 2/total.
    With ``total <= 2**52`` the products stay in float64's exact-integer
    range, so the initial floor deficit cannot exceed the atom count.
    """
    scaled = weights * float(total)
    base = np.floor(scaled).astype(np.int64)
    deficit = int(total - base.sum())
    while deficit > 0:
        k = min(deficit, base.shape[0])
        rem = scaled - base
        take = np.argsort(-rem, kind="stable")[:k]
        base[take] += 1
        deficit -= k
    while deficit < 0:
        k = min(-deficit, base.shape[0])
        take = np.argsort(-base, kind="stable")[:k]
        base[take] -= 1
        deficit += k
    return base


def solve_transport(
    cost: np.ndarray, supply: np.ndarray, demand: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact optimal transport between weighted supports.

    Parameters
    ----------
    cost : (k, l) nonnegative float array
    supply, demand : weight vectors, each summing to 1

    Returns
    -------
    (rows, cols, mass) arrays describing a sparse optimal plan whose
    marginals match the integer-quantized weights (distortion < 2^-51
    per atom); callers repair marginals to float weights afterwards.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    ns, nt = cost.shape
    if ns != supply.shape[0] or nt != demand.shape[0]:
        raise ValueError("cost matrix shape does not match weight vectors")

    keep_s = np.flatnonzero(supply > 0)
    keep_t = np.flatnonzero(demand > 0)
    ws = supply[keep_s]
    wt = demand[keep_t]
    ns, nt = ws.shape[0], wt.shape[0]
    if ws.max() == ws.min() and wt.max() == wt.min() and ns * nt <= _MASS_SCALE:
        # exactly uniform marginals: equal integer units per atom keep the
        # vertex solutions clean (permutation multiples; no +-1-unit split)
        k = _MASS_SCALE // (ns * nt)
        int_supply = np.full(ns, nt * k, dtype=np.int64)
        int_demand = np.full(nt, ns * k, dtype=np.int64)
    else:
        int_supply = _integer_masses(ws / ws.sum(), _MASS_SCALE)
        int_demand = _integer_masses(wt / wt.sum(), _MASS_SCALE)
        # atoms below 2^-52 mass quantize to zero units; they carry no plan mass
        keep_s = keep_s[int_supply > 0]
        keep_t = keep_t[int_demand > 0]
        int_supply = int_supply[int_supply > 0]
        int_demand = int_demand[int_demand > 0]

    sub_cost = cost[np.ix_(keep_s, keep_t)]
    max_c = float(sub_cost.max()) if sub_cost.size else 0.0
    if max_c > 0:
        scale = float(1 << COST_SCALE_BITS) / max_c
        int_cost = np.rint(sub_cost * scale).astype(np.int64)
    else:
        int_cost = np.zeros_like(sub_cost, dtype=np.int64)

    status, rows, cols, vals = _solve_int(int_cost, int_supply, int_demand)
    if status != STATUS_OPTIMAL:
        raise SolverFailure(f"network simplex failed with status {status}")

    mass = vals.astype(np.float64) / float(int_supply.sum())
    return keep_s[rows], keep_t[cols], mass
