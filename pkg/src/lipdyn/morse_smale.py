"""Connection graphs between hyperbolic equilibria and their perturbation stability.

Connections are detected by forward integration from a mesh on the local
unstable sphere of the source: an orbit counts as a witness once it enters
the target's isolation ball and then contracts toward the target for
``k_confirm`` consecutive steps.  A miss is only a miss at mesh resolution.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonExceeded, LipdynError, NodeCountMismatch
from .graph_transform import UNSTABLE, SplitSystem, compute_invariant_graph
from .hyperbolicity import certify_hyperbolic, jacobian
from .spectral_split import split_spectrum
from .transversality import TransversalWitness, certify_transversal, intersect_graphs

ABSENT = None
NO_CERT = "no-transversality-certificate"

DEFAULTS = {
    "horizon": 200,
    "k_confirm": 10,
    "n_mesh": 16,
    "start_fraction": 0.5,
    "linear_start_fraction": 1e-4,
    "floor": 1e-13,
    "escape_radius": 1e3,
    "use_graph_max_dim": 3,
    "graph_res": 101,
    "dg1_orbits": 50,
    "dg1_horizon": 400,
    "chart_points": 301,
    "chart_steps": 3.0,
    "norm_samples": 2000,
    "seed": 0,
}


def _params(params):
    out = dict(DEFAULTS)
    out.update(params or {})
    return out


@dataclass
class EquilibriumNode:
    id: str
    point: np.ndarray
    cert: object
    system: SplitSystem

    @property
    def unstable_dim(self):
        return self.cert.unstable_dim

    @property
    def radius(self):
        return float(self.cert.isolation_radius)

    def distance(self, x):
        """Adapted-norm distance of a batch (..., d) to the equilibrium."""
        x = np.asarray(x, dtype=float)
        return self.system.flat_norm(self._coords(x - self.point))

    def _coords(self, v):
        xi, eta = self.system.split.to_coords(v)
        return np.concatenate([xi, eta], axis=-1)

    def to_dict(self):
        return {"id": self.id, "point": self.point.tolist(), "unstable_dim": self.unstable_dim,
                "isolation_radius": self.radius, "strong": bool(self.cert.strong_flag),
                "gamma": self.cert.gamma, "gamma_mode": self.cert.gamma_mode}


def make_node(model, node_id, point, delta, rho=1.0, n_pairs=100_000, seed=0, min_pairs=None,
              gamma=None):
    """Certified node at an equilibrium point (certificate not strict)."""
    point = np.asarray(point, dtype=float)
    split = split_spectrum(jacobian(model, point), rho)
    kw = {} if min_pairs is None else {"min_pairs": min_pairs}
    cert = certify_hyperbolic(model, point, split, delta, gamma=gamma, n_pairs=n_pairs, seed=seed,
                              strict=False, **kw)
    system = SplitSystem(model, point, split, gamma=cert.gamma, gamma_mode=cert.gamma_mode)
    return EquilibriumNode(str(node_id), point, cert, system)


@dataclass
class ConnectionWitness:
    orbit: np.ndarray
    entry_index: int
    source_exit_data: dict
    transversal: object = None
    flag: str = ""
    confirm: dict = field(default_factory=dict)
    seed_coords: np.ndarray = None

    def residual(self, model):
        if len(self.orbit) < 2:
            return 0.0
        return float(np.max(np.abs(model(self.orbit[:-1]) - self.orbit[1:])))

    def to_dict(self):
        out = {
            "entry_index": self.entry_index,
            "orbit_length": int(len(self.orbit)),
            "orbit_head": self.orbit[0].tolist(),
            "entry_point": self.orbit[self.entry_index].tolist(),
            "source_exit_data": self.source_exit_data,
            "confirm": self.confirm,
            "flag": self.flag,
        }
        if self.transversal is not None:
            out["transversal"] = self.transversal.to_dict()
        return out


@dataclass
class ConnectionGraph:
    nodes: list
    edges: list
    dg_flag: bool
    transitive_closure_ok: bool
    cycles: list = field(default_factory=list)
    missing_transitive: list = field(default_factory=list)
    topological_order: list = None
    order_ok: bool = True
    dg1: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [n.id for n in self.nodes]

    def edge_set(self):
        return {(i, j) for i, j, _ in self.edges}

    def to_dict(self):
        return {
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [{"source": i, "target": j, "witness": w.to_dict()} for i, j, w in self.edges],
            "dg_flag": self.dg_flag,
            "transitive_closure_ok": self.transitive_closure_ok,
            "missing_transitive": [list(e) for e in self.missing_transitive],
            "cycles": self.cycles,
            "topological_order": self.topological_order,
            "order_ok": self.order_ok,
            "dg1": self.dg1,
            "errors": self.errors,
        }

    def to_dot(self, name="connections"):
        lines = [f"digraph {name} {{"]
        for n in self.nodes:
            lines.append(f'  "{n.id}" [label="{n.id} (du={n.unstable_dim})"];')
        for i, j, w in sorted(self.edges, key=lambda e: (e[0], e[1])):
            style = "solid" if w.transversal is not None else "dashed"
            lines.append(f'  "{i}" -> "{j}" [style={style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _sphere_mesh(d_u, n, rng):
    if d_u == 1:
        return np.array([[1.0], [-1.0]])
    if d_u == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if d_u == 3:
        k = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * k / n)
        th = np.pi * (1 + 5 ** 0.5) * k
        return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=-1)
    v = rng.normal(size=(n, d_u))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _local_unstable_graph(node, p):
    sys = node.system
    if not (sys.d_s >= 1 and sys.split.dim <= p["use_graph_max_dim"]):
        return None
    try:
        return compute_invariant_graph(sys, UNSTABLE, radius=node.radius, grid_res=p["graph_res"])
    except LipdynError:
        return None


def unstable_seeds(node, p, graph="auto"):
    """Seed points on the local unstable sphere and the seeding mode."""
    sys = node.system
    rng = np.random.default_rng(p["seed"])
    dirs = _sphere_mesh(sys.d_u, p["n_mesh"], rng)
    if graph == "auto":
        graph = _local_unstable_graph(node, p)
    p["_seed_graph"] = graph
    frac = p["start_fraction"] if graph is not None else p["linear_start_fraction"]
    scale = node.radius * frac / np.maximum(sys.norm.norm_u(dirs), 1e-300)
    xi = dirs * scale[:, None]
    if graph is not None:
        eta = graph(xi)
        mode = "graph"
    else:
        eta = np.zeros((len(xi), sys.d_s))
        mode = "linear"
    pts = node.point + sys.split.from_coords(xi, eta)
    return pts, xi, mode


def _simulate(model, x0, n_steps, escape):
    orbit = [np.asarray(x0, dtype=float)]
    x = orbit[0]
    for _ in range(n_steps):
        with np.errstate(all="ignore"):
            x = model(x)
        bad = ~np.all(np.isfinite(x), axis=-1) | (np.max(np.abs(np.nan_to_num(x, nan=np.inf)), axis=-1) > escape)
        x = np.where(bad[..., None], np.nan, x)
        orbit.append(x)
    return np.stack(orbit, axis=-2 if np.ndim(x0) > 1 else 0)


def _confirm(dist, radius, start, k, floor):
    """Entry at ``start`` followed by k steps inside the ball with shrinking distance."""
    seg = dist[start:start + k + 1]
    if len(seg) < k + 1 or not np.all(np.isfinite(seg)) or np.any(seg > radius):
        return None
    ratios = []
    for d0, d1 in zip(seg[:-1], seg[1:]):
        if d0 <= floor:
            ratios.append(0.0)
            continue
        if d1 >= d0:
            return None
        ratios.append(d1 / d0)
    return max(ratios)


def _first_confirmed(dist, radius, k, floor):
    inside = np.nonzero(np.isfinite(dist) & (dist <= radius))[0]
    for m in inside:
        if m > 0 and dist[m - 1] <= radius:
            continue
        f = _confirm(dist, radius, int(m), k, floor)
        if f is not None:
            return int(m), f
    return None


def _exit_data(node, orbit):
    d = node.distance(orbit)
    inside = np.isfinite(d) & (d <= node.radius)
    n_in = 0
    while n_in < len(d) - 1 and inside[n_in] and inside[n_in + 1]:
        n_in += 1
    ratios = [d[m + 1] / d[m] for m in range(n_in) if d[m] > 0]
    expansion = float(min(ratios)) if ratios else float("nan")
    return {"start_radius": float(d[0]), "steps_in_ball": int(n_in),
            "min_expansion": expansion,
            "backward_factor": float(1.0 / expansion) if ratios else float("nan"),
            "ok": bool(d[0] <= node.radius and ratios and expansion > 1.0)}


def detect_connection(model, source, target, params=None, others=(), graph="auto"):
    """ConnectionWitness for source -> target, ABSENT, or HorizonExceeded.

    ``others`` are the remaining nodes; an orbit settling in one of their
    balls, or escaping, is a conclusive miss for this mesh point.
    """
    p = _params(params)
    if source.unstable_dim == 0:
        return ABSENT
    seeds, xi, mode = unstable_seeds(source, p, graph)
    graph = p.pop("_seed_graph")
    orbits = _simulate(model, seeds, p["horizon"], p["escape_radius"])
    k, floor = p["k_confirm"], p["floor"]
    pending = []
    for idx in range(len(seeds)):
        orb = orbits[idx]
        hit = _first_confirmed(target.distance(orb), target.radius, k, floor)
        if hit is not None:
            g = graph if mode == "graph" else None
            return _build_witness(model, source, target, seeds[idx], xi[idx], hit, dict(p, _graph=g), mode)
        finite = np.all(np.isfinite(orb), axis=-1)
        if not finite.all():
            continue
        settled = any(_first_confirmed(o.distance(orb), o.radius, k, floor) is not None
                      for o in others if o.id != source.id)
        if not settled:
            pending.append(idx)
    if pending:
        raise HorizonExceeded(f"{len(pending)} mesh orbits from {source.id} unresolved after "
                              f"{p['horizon']} steps")
    return ABSENT


def _build_witness(model, source, target, seed_point, seed_xi, hit, p, mode):
    entry, factor = hit
    n = entry + p["k_confirm"]
    orbit = _simulate(model, seed_point, n, p["escape_radius"])
    w = ConnectionWitness(orbit, entry, _exit_data(source, orbit),
                          confirm={"max_factor": float(factor), "k_confirm": p["k_confirm"],
                                   "seed_mode": mode},
                          seed_coords=np.asarray(seed_xi, dtype=float))
    try:
        w.transversal = sink_transversal_witness(model, source, target, w, p)
        w.flag = "transversal" if w.transversal is not None else NO_CERT
    except LipdynError as exc:
        w.flag = f"{NO_CERT}: {exc}"
    return w


def _norm_scale(node, p):
    return _norm_bounds(node, p)[1]


def _frame(direction):
    """Orthonormal frame with first column along ``direction``."""
    d = direction / np.linalg.norm(direction)
    q, _ = np.linalg.qr(np.column_stack([d, np.eye(d.size)]))
    q[:, 0] = d
    rest = q[:, 1:d.size]
    rest = rest - np.outer(d, d @ rest)
    rest, _ = np.linalg.qr(rest)
    return d, rest


def _curve_chart(curve, x0, e1, E2, r_max):
    """theta over span(e1) from curve samples, with node Lipschitz bound."""
    rel = curve - x0
    y1 = rel @ e1
    y2 = rel @ E2
    dy1 = np.diff(y1)
    if not (np.all(dy1 > 0) or np.all(dy1 < 0)):
        return None
    if dy1[0] < 0:
        y1, y2 = y1[::-1], y2[::-1]
    r = min(r_max, -y1[0], y1[-1])
    if not r > 0:
        return None
    keep = (y1 >= -r - 1e-15) & (y1 <= r + 1e-15)
    dy = np.diff(y1)
    lip = float(np.max(np.linalg.norm(np.diff(y2, axis=0), axis=-1) / dy)) if y2.shape[1] else 0.0
    y2_at0 = np.array([np.interp(0.0, y1, y2[:, c]) for c in range(y2.shape[1])])

    def theta(y):
        y = np.asarray(y, dtype=float)
        s = y[..., 0]
        cols = [np.interp(s, y1, y2[:, c]) - y2_at0[c] for c in range(y2.shape[1])]
        return np.stack(cols, axis=-1) if cols else np.zeros(s.shape + (0,))

    shift = E2 @ y2_at0
    return {"theta": theta, "lip": lip, "r": float(r), "kept": int(keep.sum()), "shift": shift}


def _zero_sigma(k1):
    def sigma(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (k1,))

    return sigma


def _curve_samples(model, source, seed_xi, n_steps, p):
    """Images after n_steps of seeds xi exp(s), |s| <= chart_steps log(a)."""
    span = p["chart_steps"] * np.log(min(max(source.system.split.a, 1.01), 1e6))
    s = np.linspace(-span, span, p["chart_points"])
    xi = np.asarray(seed_xi, dtype=float)[None, :] * np.exp(s)[:, None]
    sys = source.system
    eta = np.zeros((len(xi), sys.d_s))
    pts = source.point + sys.split.from_coords(xi, eta)
    if p.get("_graph") is not None:
        pts = source.point + sys.split.from_coords(xi, p["_graph"](xi))
    return _simulate(model, pts, n_steps, p["escape_radius"])[:, -1]


def _chart_index(target, witness):
    """Confirmed orbit index balancing distance to the target and room in its ball."""
    stop = min(len(witness.orbit), witness.entry_index + witness.confirm.get("k_confirm", 0) + 1)
    idx = np.arange(witness.entry_index, stop)
    d = target.distance(witness.orbit[idx])
    score = np.minimum(d, target.radius - d)
    return int(idx[np.argmax(score)])


def sink_transversal_witness(model, source, target, witness, p, frame=None):
    """Transversal witness at the entry point for a curve source and a sink target.

    X1 is the secant line of the unstable curve at the entry point and X2 its
    orthogonal complement; the curve is a graph over X1, and the flat piece
    over X2 lies in the target's isolation ball, hence in its local stable set.
    """
    if not (source.unstable_dim == 1 and target.unstable_dim == 0):
        return None
    n = _chart_index(target, witness)
    x0 = witness.orbit[n]
    curve = _curve_samples(model, source, witness.seed_coords, n, p)
    if not np.all(np.isfinite(curve)):
        return None
    if frame is None:
        e1, E2 = _frame(curve[-1] - curve[0])
    else:
        e1, E2 = frame
    room = (target.radius - float(target.distance(x0))) / _norm_scale(target, p)
    chart = _curve_chart(curve, x0, e1, E2, room)
    if chart is None:
        return None
    k1, k2 = 1, x0.size - 1
    r = chart["r"] / (1 + chart["lip"])
    sigma = _zero_sigma(k1)
    cert = certify_transversal(chart["theta"], sigma, x0, dims=(k1, k2), lips=(chart["lip"], 0.0),
                               radius=r)
    if not cert["transversal"]:
        return None
    meet = intersect_graphs(chart["theta"], sigma, dims=(k1, k2), lip_bounds=(chart["lip"], 0.0), r=r)
    point = x0 + chart["shift"] + e1 * meet["y1"][0] + E2 @ meet["point"][k1:]
    return TransversalWitness(point, (k1, k2), r, chart["theta"], sigma, chart["lip"], 0.0,
                              {"frame_e1": e1, "frame_E2": E2, "x0": x0, "room": room, "index": n,
                               "residual": meet["residual"], "path": meet["path"]})


def grow_unstable_set(model, node, n_iterations=30, n_samples=400, params=None, graph="auto"):
    """Forward images of a fundamental domain of the local unstable graph.

    Returns the per-iterate point clouds and, for curve sources, per-iterate
    charts over the source's unstable coordinate; iterates where the image
    is not a graph over that coordinate are flagged as cloud only.
    """
    p = _params(params)
    if n_iterations > 30:
        raise ValueError("n_iterations is capped at 30")
    sys = node.system
    if sys.d_u == 0:
        return {"clouds": [], "charts": [], "flags": [], "mode": "empty"}
    if graph == "auto":
        graph = _local_unstable_graph(node, p)
    rng = np.random.default_rng(p["seed"])
    r = node.radius * (p["start_fraction"] if graph is not None else p["linear_start_fraction"])
    a = sys.split.a
    if sys.d_u == 1:
        # the whole local chart, so the equilibrium itself is in the first cloud
        xi = np.linspace(-r, r, 2 * n_samples + 1)[:, None]
    else:
        dirs = _sphere_mesh(sys.d_u, n_samples, rng)
        rad = rng.uniform(r / min(a, 1e6), r, size=(n_samples, 1))
        xi = dirs * rad / np.maximum(sys.norm.norm_u(dirs), 1e-300)[:, None]
    eta = graph(xi) if graph is not None else np.zeros((len(xi), sys.d_s))
    pts = node.point + sys.split.from_coords(xi, eta)
    orbit = _simulate(model, pts, n_iterations, p["escape_radius"])
    clouds, charts, flags = [], [], []
    for it in range(n_iterations + 1):
        cloud = orbit[:, it]
        cloud = cloud[np.all(np.isfinite(cloud), axis=-1)]
        clouds.append(cloud)
        chart, flag = None, "cloud"
        if sys.d_u == 1 and len(cloud):
            cu, cs = sys.split.to_coords(cloud - node.point)
            order = np.argsort(xi[: len(cu), 0]) if len(cu) == len(xi) else None
            if order is not None and np.all(np.diff(cu[order, 0]) > 0):
                dcu = np.diff(cu[order, 0])
                dcs = np.diff(cs[order], axis=0)
                lip = float(np.max(np.abs(dcs).max(axis=-1) / dcu)) if cs.shape[1] else 0.0
                chart = {"xi_min": float(cu[order[0], 0]), "xi_max": float(cu[order[-1], 0]),
                         "lip": lip}
                flag = "chart"
        charts.append(chart)
        flags.append(flag)
    return {"clouds": clouds, "charts": charts, "flags": flags,
            "mode": "graph" if graph is not None else "linear"}


def hausdorff(a, b):
    """Symmetric Hausdorff distance between two finite point sets."""
    from scipy.spatial import cKDTree

    a, b = np.atleast_2d(a), np.atleast_2d(b)
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))


def find_cycle(ids, edges):
    """A directed cycle as a node list (first node repeated at the end), or None.

    Iterative depth-first search with white/grey/black colouring.
    """
    adj = {i: [] for i in ids}
    for i, j in sorted(edges):
        adj[i].append(j)
    colour = {i: 0 for i in ids}
    parent = {}
    for root in ids:
        if colour[root]:
            continue
        stack = [(root, iter(adj[root]))]
        colour[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = 2
                stack.pop()
                continue
            if colour[nxt] == 0:
                colour[nxt] = 1
                parent[nxt] = node
                stack.append((nxt, iter(adj[nxt])))
            elif colour[nxt] == 1:
                cycle = [nxt]
                cur = node
                while cur != nxt:
                    cycle.append(cur)
                    cur = parent[cur]
                cycle.append(nxt)
                return cycle[::-1]
    return None


def simple_cycles_bruteforce(ids, edges):
    """All simple cycles by enumerating node sequences; small graphs only."""
    es = set(edges)
    out = set()
    for k in range(1, len(ids) + 1):
        for combo in itertools.permutations(ids, k):
            if combo[0] != min(combo):
                continue
            if all((combo[m], combo[(m + 1) % k]) in es for m in range(k)):
                out.add(combo)
    return sorted(out)


def topological_order(ids, edges):
    """Kahn ordering, or None when the relation has a cycle."""
    indeg = {i: 0 for i in ids}
    adj = {i: [] for i in ids}
    for i, j in edges:
        adj[i].append(j)
        indeg[j] += 1
    ready = sorted(i for i in ids if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in sorted(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    return order if len(order) == len(ids) else None


def transitive_gaps(edges):
    es = set(edges)
    return sorted({(i, k) for i, j in es for j2, k in es if j == j2 and i != k and (i, k) not in es})


def dg1_surrogate(model, nodes, params=None):
    """Sampled long orbits from the model box; each should settle in some node's ball."""
    p = _params(params)
    if model.domain_lo is None or model.domain_hi is None:
        return {"run": False}
    if not (np.all(np.isfinite(model.domain_lo)) and np.all(np.isfinite(model.domain_hi))):
        return {"run": False}
    rng = np.random.default_rng(p["seed"] + 11)
    lo, hi = np.asarray(model.domain_lo, float), np.asarray(model.domain_hi, float)
    x = rng.uniform(lo, hi, size=(p["dg1_orbits"], lo.size))
    orbit = _simulate(model, x, p["dg1_horizon"], p["escape_radius"])
    end = orbit[:, -1]
    settled = np.zeros(len(x), dtype=bool)
    for n in nodes:
        settled |= np.isfinite(n.distance(end)) & (n.distance(end) <= n.radius)
    escaped = ~np.all(np.isfinite(end), axis=-1)
    return {"run": True, "n_orbits": int(len(x)), "settled": int(settled.sum()),
            "escaped": int(escaped.sum()), "ok": bool(np.all(settled | escaped))}


def _norm_bounds(node, p):
    """Sampled (min, max) of |v|_adapted over Euclidean unit vectors, widened 10%."""
    rng = np.random.default_rng(p["seed"] + 7)
    v = rng.normal(size=(p["norm_samples"], node.point.size))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    d = node.system.flat_norm(node._coords(v))
    return float(np.min(d)) / 1.1, 1.1 * float(np.max(d))


def check_ball_disjointness(nodes, params=None):
    """Pairs whose isolation balls may overlap, via Euclidean enclosing radii."""
    p = _params(params)
    enclosing = {n.id: n.radius / _norm_bounds(n, p)[0] for n in nodes}
    return [(a.id, b.id) for a, b in itertools.combinations(nodes, 2)
            if np.linalg.norm(a.point - b.point) <= enclosing[a.id] + enclosing[b.id]]


def build_connection_graph(model, nodes, params=None):
    """Probe every ordered pair and assemble the flags."""
    p = _params(params)
    edges, errors = [], {}
    for s in nodes:
        for t in nodes:
            if s.id == t.id:
                continue
            others = [n for n in nodes if n.id not in (s.id, t.id)]
            try:
                w = detect_connection(model, s, t, p, others + [t])
            except LipdynError as exc:
                errors[f"{s.id}->{t.id}"] = f"{type(exc).__name__}: {exc}"
                continue
            if w is not None:
                edges.append((s.id, t.id, w))
    ids = [n.id for n in nodes]
    pairs = [(i, j) for i, j, _ in edges]
    cycle = find_cycle(ids, pairs)
    gaps = transitive_gaps(pairs)
    order = topological_order(ids, pairs)
    pos = {i: k for k, i in enumerate(order)} if order else {}
    order_ok = order is not None and all(pos[i] < pos[j] for i, j in pairs)
    return ConnectionGraph(list(nodes), edges, cycle is None, not gaps,
                           [cycle] if cycle else [], gaps, order, order_ok,
                           dg1_surrogate(model, nodes, p), errors)


def check_geometric_equivalence(graph_a, graph_b, node_pairing=None):
    """True iff edge sets correspond under the pairing; discrepancies (i, j, present_in)."""
    if len(graph_a.nodes) != len(graph_b.nodes):
        raise NodeCountMismatch(f"{len(graph_a.nodes)} nodes vs {len(graph_b.nodes)}")
    if node_pairing is None:
        node_pairing = dict(zip(graph_a.ids, graph_b.ids))
    if sorted(node_pairing.values()) != sorted(graph_b.ids) or sorted(node_pairing) != sorted(graph_a.ids):
        raise NodeCountMismatch("node pairing is not a bijection")
    back = {v: k for k, v in node_pairing.items()}
    ea = graph_a.edge_set()
    eb = {(back[i], back[j]) for i, j in graph_b.edge_set()}
    disc = [(i, j, "A-only") for i, j in sorted(ea - eb)]
    disc += [(i, j, "B-only") for i, j in sorted(eb - ea)]
    return not disc, disc


def delete_edge(graph, i, j):
    """Copy of the graph without the edge i -> j (negative-control helper)."""
    edges = [e for e in graph.edges if (e[0], e[1]) != (i, j)]
    return ConnectionGraph(graph.nodes, edges, graph.dg_flag, graph.transitive_closure_ok,
                           graph.cycles, graph.missing_transitive, graph.topological_order,
                           graph.order_ok, graph.dg1, graph.errors)


def morse_smale_items(graph):
    """Per-item status of the Morse-Smale conditions on a connection graph."""
    return {
        "strong_certificates": all(bool(n.cert.strong_flag) for n in graph.nodes),
        "dynamically_gradient": bool(graph.dg_flag),
        "transversal_or_flagged": all(w.transversal is not None or w.flag.startswith(NO_CERT)
                                      for _, _, w in graph.edges),
        "transitive": bool(graph.transitive_closure_ok),
    }


def perturbed_transversal(model_eta, source_eta, target_eta, base_witness, params=None,
                          base_source=None):
    """Re-establish a sink transversal witness for a perturbed map.

    Charts of the perturbed unstable curve are expressed in the unperturbed
    frame at the unperturbed entry point and intersected with the flat
    complement through transversality.intersect_graphs.
    """
    p = _params(params)
    tw = base_witness.transversal
    if tw is None:
        return None
    e1, E2 = tw.meta["frame_e1"], tw.meta["frame_E2"]
    x0 = tw.meta["x0"]
    n = tw.meta["index"]
    v0 = base_witness.orbit[0] - (base_source.point if base_source is not None else source_eta.point)
    bu = source_eta.system.split.basis_u[:, 0]
    xi = np.array([np.sign(bu @ v0) * np.linalg.norm(v0) / np.linalg.norm(bu)])
    p = dict(p, _graph=_local_unstable_graph(source_eta, p))
    curve = _curve_samples(model_eta, source_eta, xi, n, p)
    if not np.all(np.isfinite(curve)):
        return None
    room = (target_eta.radius - float(target_eta.distance(x0))) / _norm_scale(target_eta, p)
    chart = _curve_chart(curve, x0, e1, E2, room)
    if chart is None:
        return None
    k1, k2 = 1, x0.size - 1
    r = min(tw.radius0, chart["r"] / (1 + chart["lip"]))
    sigma = _zero_sigma(k1)
    offset = E2.T @ chart["shift"]

    def theta_abs(y):
        return chart["theta"](y) + offset

    meet = intersect_graphs(theta_abs, sigma, dims=(k1, k2), lip_bounds=(chart["lip"], 0.0), r=r)
    grid = np.linspace(-r, r, 201)[:, None]
    dev = float(np.max(np.abs(theta_abs(grid) - tw.chart_theta(grid)))) if k2 else 0.0
    c = chart["lip"] * tw.lip_sigma
    return {"y1": meet["y1"], "point": x0 + e1 * meet["y1"][0] + E2 @ meet["point"][k1:],
            "lip": chart["lip"], "r": r, "theta_deviation": dev,
            "closeness_ok": bool(dev <= (1 - c) * r / 2), "residual": meet["residual"],
            "shift": float(abs(meet["y1"][0]))}


def run_stability_experiment(family, base_points, deltas, ids=None, config=None):
    """Continue, recertify and rebuild the connection graph at every eta.

    ``base_points`` are the equilibria of the eta = 0 member; ``deltas`` their
    certificate radii.  Returns per-eta stage rows, the base graph and the
    largest eta in the grid with full equivalence.
    """
    from .perturbation import continue_equilibrium

    cfg = dict(config or {})
    params = _params(cfg.get("params"))
    n_pairs = cfg.get("n_pairs", 100_000)
    min_pairs = cfg.get("min_pairs")
    seed = cfg.get("seed", 0)
    ids = [str(k) for k in range(len(base_points))] if ids is None else list(ids)
    base_model = family.base
    nodes0 = [make_node(base_model, i, x, d, n_pairs=n_pairs, seed=seed, min_pairs=min_pairs)
              for i, x, d in zip(ids, base_points, deltas)]
    graph0 = build_connection_graph(base_model, nodes0, params)
    premise = morse_smale_items(graph0)
    premise["balls_disjoint"] = not check_ball_disjointness(nodes0, params)
    rows, graphs, valid = [], {}, []
    for eta in family.eta_values:
        eta = float(eta)
        model = family.model_at(eta)
        stage_rows = []
        first_fail = None

        def stage(name, ok, detail=""):
            nonlocal first_fail
            stage_rows.append({"eta": eta, "stage": name, "pass": bool(ok), "detail": detail})
            if not ok and first_fail is None:
                first_fail = name

        try:
            if eta == 0.0:
                nodes, graph = nodes0, graph0
                stage("continue", True, "base")
                stage("certify", premise["strong_certificates"])
            else:
                conts = [continue_equilibrium(n.system, model, eta=eta, radius=n.cert.delta,
                                              n_pairs=n_pairs, seed=seed) for n in nodes0]
                pts = [r.x_star for r in conts]
                stage("continue", True, f"max residual {max(r.residual for r in conts)}")
                nodes = [make_node(model, n.id, x, n.cert.delta, n_pairs=n_pairs, seed=seed,
                                   min_pairs=min_pairs) for n, x in zip(nodes0, pts)]
                stage("certify", all(bool(n.cert.strong_flag) for n in nodes))
                graph = build_connection_graph(model, nodes, params)
            graphs[eta] = graph
            stage("graph", graph.dg_flag and not graph.errors,
                  f"edges={sorted(graph.edge_set())}")
            subset = graph.edge_set() <= graph0.edge_set()
            stage("no_new_connections", subset)
            equal, disc = check_geometric_equivalence(graph0, graph)
            stage("equivalence", equal, f"discrepancies={disc}")
            trans_ok, notes = True, []
            by_pair = {(i, j): w for i, j, w in graph0.edges}
            node_of = {n.id: n for n in nodes}
            for (i, j), w in sorted(by_pair.items()):
                if w.transversal is None:
                    notes.append(f"{i}->{j}:{NO_CERT}")
                    continue
                out = perturbed_transversal(model, node_of[i], node_of[j], w, params,
                                            base_source=next(n for n in nodes0 if n.id == i))
                if out is None or not out["closeness_ok"]:
                    trans_ok = False
                    notes.append(f"{i}->{j}:failed")
                else:
                    notes.append(f"{i}->{j}:dev={out['theta_deviation']:.3e},r={out['r']:.3e}")
            stage("transversal", trans_ok, ";".join(notes))
        except LipdynError as exc:
            stage("error", False, f"{type(exc).__name__}: {exc}")
        rows.extend(stage_rows)
        if first_fail is None:
            valid.append(eta)
    eta_valid_max = None
    for eta in sorted(float(e) for e in family.eta_values):
        if eta in valid:
            eta_valid_max = eta
        else:
            break
    return {"rows": rows, "graphs": graphs, "base_graph": graph0, "premise": premise,
            "eta_valid_max": eta_valid_max}
