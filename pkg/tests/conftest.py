import math
import warnings

import numpy as np
import pytest

from sealab.world import Node, SceneObject, World, WorldConfig, generate_world


def custom_world(positions, edges=(), objects=(), hfov=60.0, walls=(), panorama_height_px=120, view_px=32):
    """A hand-built world (arbitrary graph, no rooms) for exercising single rules."""
    cfg = WorldConfig(rows=2, cols=2, hfov_deg=hfov, panorama_height_px=panorama_height_px, view_px=view_px)
    nodes = tuple(Node(i, (float(x), float(y)), 0, 0.1 * i) for i, (x, y) in enumerate(positions))
    objs = tuple(
        SceneObject(i, (float(x), float(y)), float(size), float(height), tuple(color), cls)
        for i, (x, y, size, height, color, cls) in enumerate(objects)
    )
    return World(
        config=cfg,
        nodes=nodes,
        objects=objs,
        room_of={n.id: 0 for n in nodes},
        edges=tuple(sorted((min(a, b), max(a, b)) for a, b in edges)),
        room_hues=(0.5,),
        walls=tuple(walls),
    )


@pytest.fixture(scope="session")
def world6():
    return generate_world(WorldConfig(rows=6, cols=6, node_spacing=2.5, seed=7))


@pytest.fixture(autouse=True)
def _quiet_empty_bank_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="instance loss with an empty memory bank")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_setup(seed):
    """A widths-<=8 float64 net, a batch, and a half-filled bank for gradient checks."""
    from sealab.nncore.model import ArchConfig, EncoderState
    from sealab.tasks import MemoryBank

    arch = ArchConfig(in_dim=6, enc_hidden=(8, 8), feat_dim=5, jig_hidden=8, trav_hidden=4, ins_hidden=6, proj_dim=4)
    state = EncoderState(arch, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    # nonzero biases keep every hidden unit alive on some inputs at these widths
    for name, p in state.theta.items():
        if name.endswith(".bias"):
            p.data[...] = rng.uniform(0.05, 0.3, size=p.data.shape)
    batch = {
        "x": rng.normal(size=(4, 6)),
        "xq": rng.normal(size=(4, 6)),
        # the key is a constant for the loss; drawn directly so dead units can't zero it
        "k": rng.normal(size=(4, 4)),
        "labels": np.array([14, 3, 20, 27]),
        "y": np.array([1, 0, 1, 0]),
    }
    mask = np.ones((4, 27), dtype=bool)
    mask[1, 6:9] = False
    batch["mask"] = mask
    bank = MemoryBank(7, 4, dtype=np.float64)
    bank.enqueue(rng.normal(size=(5, 4)))
    return state, batch, bank


def loss_builders(state, batch, bank):
    from sealab.nncore.functional import l2_normalize, normalize_rows
    from sealab.tasks import instance_loss, jigsaw_loss, traversability_loss

    def jig():
        f = state.encode(batch["x"])
        return jigsaw_loss(state.model.jig, f, state.encode_momentum(batch["xq"]), batch["labels"], batch["mask"])[0]

    def trav():
        return traversability_loss(state.model.trav, state.encode(batch["x"]), batch["y"])[0]

    def ins():
        k = l2_normalize(batch["k"])
        q = normalize_rows(state.model.ins(state.encode(batch["x"])))
        return instance_loss(q, k, bank, 0.07)[0]

    return {"jigsaw": jig, "traversability": trav, "instance": ins}


def max_relative_grad_error(state, loss_fn, h=1e-5):
    """Worst per-tensor max|analytic - numeric| / max(|analytic|, |numeric|) over theta.

    Scaling by each tensor's largest entry keeps finite-difference roundoff
    (about 1e-10 absolute here) from dominating entries that are nearly zero.
    """
    from sealab.nncore.tensor import backward
    from sealab.oracles import oracle_grad

    state.zero_grad()
    backward(loss_fn())
    names = list(state.theta)
    params = [state.theta[n] for n in names]
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = oracle_grad(lambda: loss_fn().data, [p.data for p in params], h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst


def random_graph_world(rng, n_nodes=None, hfov=None):
    """Scattered nodes with random edges (diagonals and long edges included)."""
    n = int(rng.integers(3, 12)) if n_nodes is None else n_nodes
    pts = rng.uniform(-6, 6, size=(n, 2)).round(3)
    edges = set()
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < 0.35:
                edges.add((a, b))
    hfov = float(rng.choice([30.0, 45.0, 60.0, 90.0])) if hfov is None else hfov
    return custom_world([tuple(p) for p in pts], edges=sorted(edges), hfov=hfov)


def boundary_world(heading_idx, delta_deg, dist, hfov=60.0):
    """Node 0 with a single neighbour at bearing heading + delta_deg and distance ``dist``."""
    bearing = math.radians(30.0 * heading_idx + delta_deg)
    return custom_world([(0.0, 0.0), (dist * math.sin(bearing), dist * math.cos(bearing))],
                        edges=[(0, 1)], hfov=hfov)


def boundary_cases(eps=1e-6):
    """(world, pose) pairs sitting on or just around |delta| = hfov/2 and distance = 5 m."""
    cases = []
    for hfov in (60.0, 90.0):
        half = hfov / 2.0
        for h in range(12):
            for sign in (1.0, -1.0):
                for off in (-eps, 0.0, eps):
                    cases.append((boundary_world(h, sign * (half + off), 2.5, hfov), (0, h, 1)))
            for doff in (-eps, 0.0, eps):
                cases.append((boundary_world(h, 0.0, 5.0 + doff, hfov), (0, h, 1)))
    return cases


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
