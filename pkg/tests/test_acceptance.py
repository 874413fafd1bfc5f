"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from gradsuite import TOLERANCE, all_cases, worst_error
from rnn_oracle import ORACLES

from trajembed.adapters import AdapterSpec, EarlyStopping, run_adapter, uniform_baseline
from trajembed.cli import DatasetConfig, load_data, main
from trajembed.codecs import RNNEncoder
from trajembed.data import SyntheticConfig, Trajectory, generate_synthetic, grid_network, split_dataset
from trajembed.geo import haversine
from trajembed.losses import MECSpec, infonce, kl_gaussian, mec
from trajembed.model import ModelConfig
from trajembed.numerics import SeededRng, Tensor
from trajembed.preprocess import map_match, spline_eval, spline_from_arrays
from trajembed.pretrain import PretrainConfig, build_model, encoder_hash, pretrain
from trajembed.registry import METHOD_NAMES, build_method


def report(number: int, checks: dict[str, bool], detail: str) -> None:
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}" + (f" (failed: {', '.join(failed)})" if failed else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    errors = {f"{group}/{name}": worst_error(case, name) for group, name, case in all_cases()}
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    checks = {name: err <= TOLERANCE for name, err in errors.items()}
    checks["runtime <= 120 s"] = elapsed <= 120.0
    report(1, checks, f"{len(errors)} components x 20 configs, worst {worst} {errors[worst]:.1e}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 2

def test_criterion_2_closed_form_losses():
    checks = {}
    for b in (2, 8, 64):
        z = Tensor(np.full((b, 4), 0.3))
        checks[f"infonce ln {b}"] = abs(infonce(z, z).item() - np.log(b)) <= 1e-9
    rng = np.random.default_rng(7)
    mu, sigma = rng.normal(size=4), rng.uniform(0.3, 2.0, size=4)
    eps = rng.standard_normal((1_000_000, 4))
    z = mu + sigma * eps
    estimate = float(np.mean(np.sum(-0.5 * eps ** 2 - np.log(sigma) + 0.5 * z ** 2, axis=1)))
    closed = kl_gaussian(mu, sigma).item()
    rel = abs(closed - estimate) / closed
    checks["kl monte carlo"] = rel <= 0.01
    checks["mec zero"] = mec(Tensor(np.zeros((4, 3))), Tensor(rng.normal(size=(4, 3)))).item() == 0.0
    checks["mec scalar"] = abs(mec(Tensor([[1.0]]), Tensor([[1.0]]), MECSpec(1.0)).item() + np.log(2)) <= 1e-12
    report(2, checks, f"KL closed {closed:.5f} vs MC {estimate:.5f} (rel {rel:.2e})")


# ---------------------------------------------------------------- 3

def _exhaustive_match(net, lng, lat):
    """Nearest segment by scanning every edge in a local equirectangular frame; ties to the lower id."""
    scale = np.cos(np.radians(lat))
    best, best_d = None, np.inf
    for e in sorted(net.edges, key=lambda e: e.id):
        pts = e.polyline
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            ax, ay = (x0 - lng) * scale, y0 - lat
            bx, by = (x1 - lng) * scale, y1 - lat
            dx, dy = bx - ax, by - ay
            seg = dx * dx + dy * dy
            t = 0.0 if seg == 0 else min(1.0, max(0.0, -(ax * dx + ay * dy) / seg))
            d = np.hypot(ax + t * dx, ay + t * dy)
            if d < best_d - 1e-15:
                best, best_d = e.id, d
    return best


def test_criterion_3_geometry_oracles():
    net = grid_network(SyntheticConfig(width=5, height=5, n_zones=1))
    rng = np.random.default_rng(3)
    lng = rng.uniform(net.node_lng.min() - 0.001, net.node_lng.max() + 0.001, 200)
    lat = rng.uniform(net.node_lat.min() - 0.001, net.node_lat.max() + 0.001, 200)
    got = [m.segment_id for m in map_match(Trajectory("p", lng, lat, np.arange(200.0)), net, radius=100.0)]
    want = [_exhaustive_match(net, a, b) for a, b in zip(lng, lat)]
    agree = sum(g == w for g, w in zip(got, want))
    meters = haversine(0.0, 0.0, 1.0, 0.0)
    knots = np.cumsum(np.r_[0.0, rng.uniform(0.5, 3.0, 7)])
    values = rng.uniform(-1, 1, (8, 2))
    spline = spline_from_arrays(knots, values)
    knot_err = float(np.max(np.abs(spline_eval(spline, knots) - values)))
    h = 1e-5
    jumps = []
    for tau in knots[1:-1]:
        left = (3 * spline_eval(spline, tau) - 4 * spline_eval(spline, tau - h) + spline_eval(spline, tau - 2 * h)) / (2 * h)
        right = (-3 * spline_eval(spline, tau) + 4 * spline_eval(spline, tau + h) - spline_eval(spline, tau + 2 * h)) / (2 * h)
        jumps.append(float(np.max(np.abs(left - right))))
    checks = {"map match": agree == 200, "haversine": abs(meters - 111_195.0) <= 10.0,
              "knots": knot_err <= 1e-12, "C1": max(jumps) <= 1e-6}
    report(3, checks, f"map match {agree}/200, haversine {meters:.1f} m, knot err {knot_err:.1e}, "
                      f"slope jump {max(jumps):.1e}")


# ---------------------------------------------------------------- 4

def test_criterion_4_rnn_oracle():
    checks, worst = {}, 0.0
    for variant in ("vanilla", "lstm", "gru"):
        for instance in range(10):
            rng = np.random.default_rng([instance, len(variant), 4])
            in_dim, hidden, n = (int(v) for v in rng.integers(1, 5, size=3))
            enc = RNNEncoder(SeededRng(instance), in_dim, hidden, variant)
            cell = enc.cells[0]
            for p in cell.parameters():
                p.assign(rng.normal(size=p.shape))
            xs = rng.normal(size=(n, in_dim))
            got = enc(Tensor(xs[None]), np.ones((1, n))).data[0]
            want = ORACLES[variant](xs.tolist(), cell.W.data.tolist(), cell.U.data.tolist(), cell.b.data.tolist(),
                                    hidden)
            err = float(np.max(np.abs(got - np.asarray(want))))
            worst = max(worst, err)
            checks[f"{variant}#{instance}"] = err <= 1e-12
    report(4, checks, f"30 instances, worst abs diff {worst:.1e}")


# ---------------------------------------------------------------- 5 and 6 share the desk-scale run

@pytest.fixture(scope="module")
def desk_run():
    start = time.perf_counter()
    data, network = load_data(DatasetConfig(SyntheticConfig(), interval=15.0, min_points=6))
    splits = split_dataset(data)
    train, _, test = (list(p) for p in splits)
    model = build_model("t2vec", train, network, ModelConfig(), seed=0)
    history = pretrain(model, train, PretrainConfig(epochs=20, batch_size=64, lr=5e-3)).history
    accuracy = model.token_accuracy(test)
    return {"data": data, "network": network, "splits": tuple(list(p) for p in splits), "model": model,
            "history": history, "accuracy": accuracy, "seconds": time.perf_counter() - start}


def test_criterion_5_end_to_end_smoke(desk_run):
    data, history = desk_run["data"], desk_run["history"]
    ids = {t.id for t in data}
    first, last = history[0]["loss"], history[-1]["loss"]
    checks = {
        "dataset 2000 generated, filtered": len(ids) <= 2000 and all(len(t) >= 6 for t in data),
        "8:1:1 split": [len(p) for p in desk_run["splits"]] == _split_sizes(len(data)),
        "20 epochs": len(history) == 20,
        "loss < 50% of first": last < 0.5 * first,
        "token accuracy >= 0.70": desk_run["accuracy"] >= 0.70,
        "runtime <= 15 min": desk_run["seconds"] <= 900.0,
    }
    report(5, checks, f"{len(data)} trajectories, loss {first:.3f} -> {last:.3f} ({last / first:.2f}), "
                      f"held-out token accuracy {desk_run['accuracy']:.3f}, {desk_run['seconds']:.0f} s")


def _split_sizes(n):
    n_train, n_eval = int(round(0.8 * n)), int(round(0.1 * n))
    return [n_train, n_eval, n - n_train - n_eval]


def test_criterion_6_strategy_contracts(desk_run):
    model, network, splits = desk_run["model"], desk_run["network"], desk_run["splits"]
    before = encoder_hash(model)
    frozen = run_adapter(model, AdapterSpec("destination", epochs=5), "no-finetune", splits, network)
    byte_identical = encoder_hash(model) == before == frozen.report.encoder_hash

    full = run_adapter(model, AdapterSpec("destination"), "full", splits, network)
    train_targets = full.adapter.examples(full.model, splits[0]).targets
    baseline = uniform_baseline(train_targets)
    acc = full.report.metrics["acc@1"]

    plateau = run_adapter(model, AdapterSpec("classification", epochs=50, patience=10, lr=1e-12), "no-finetune",
                          splits, network)
    stopper = EarlyStopping(10)
    epochs = 0
    while not stopper.should_stop:
        stopper.update(1.0)
        epochs += 1
    checks = {"no-finetune bytes": byte_identical, "full >= 3x baseline": acc >= 3 * baseline,
              "adapter stops after 10 flat epochs": len(plateau.report.history) == 11,
              "stopper stops after 10 flat epochs": epochs == 11 and stopper.bad_epochs == 10}
    report(6, checks, f"full Acc@1 {acc:.2f}% vs baseline {baseline:.2f}%, plateau run {len(plateau.report.history)} "
                      f"epochs")


# ---------------------------------------------------------------- 7

def test_criterion_7_registry():
    golden = json.loads((Path(__file__).parent / "golden_presets.json").read_text())
    ds, net = generate_synthetic(SyntheticConfig(width=8, height=8, n_trajectories=64, n_zones=4, n_drivers=2), seed=9)
    train = list(ds)
    tiny = ModelConfig(dim=16, heads=2, transformer_layers=1, cnn_filters=(4, 4), cde_steps=6)
    checks = {"20 presets": len(METHOD_NAMES) == 20 and set(METHOD_NAMES) == set(golden)}
    for name in METHOD_NAMES:
        checks[f"{name} columns"] = build_method(name).columns() == golden[name]
        model = build_model(name, train, net, tiny)
        row = pretrain(model, train, PretrainConfig(epochs=1, batch_size=64, word2vec_epochs=1)).history[0]
        checks[f"{name} step"] = all(np.isfinite(v) for v in row.values())
    report(7, checks, "20 presets match the table and take one finite step on 64 trajectories")


# ---------------------------------------------------------------- 8

def _route_families(n_per_family=60, seed=0):
    """Family 0 drives east along the southern rows; family 1 drives north along the eastern columns."""
    rng = np.random.default_rng(seed)
    origin_lng, origin_lat, step = 104.04, 30.65, 0.002
    trajs = []
    for family in (0, 1):
        for k in range(n_per_family):
            n = int(rng.integers(12, 20))
            along = np.linspace(0.0, 0.6, n) * step * 10 + rng.uniform(0, 2 * step)
            across = rng.uniform(0, 4) * step + rng.normal(0, 1e-4, n)
            if family == 0:
                lng, lat = origin_lng + along, origin_lat + across
            else:
                lng, lat = origin_lng + 14 * step + across, origin_lat + 8 * step + along
            ts = 1000.0 * len(trajs) + 15.0 * np.arange(n)
            trajs.append(Trajectory(f"f{family}_{k:03d}", lng, lat, ts, label=family))
    return trajs


def test_criterion_8_contrastive_separability():
    trajs = _route_families()
    model = build_model("TrajCL", trajs, None, ModelConfig(dim=32, heads=4, transformer_layers=1), seed=0)
    pretrain(model, trajs, PretrainConfig(epochs=10, batch_size=32, lr=2e-3))
    emb = model.embed_trajectories(trajs)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sims = unit @ unit.T
    labels = np.array([t.label for t in trajs])
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(trajs), dtype=bool)
    intra, inter = float(sims[same & off_diag].mean()), float(sims[~same].mean())
    report(8, {"intra > inter": intra > inter}, f"mean intra-family cosine {intra:.3f}, inter-family {inter:.3f}")


# ---------------------------------------------------------------- 9

def test_criterion_9_determinism(tmp_path):
    config = {
        "dataset": {"synthetic": {"width": 8, "height": 8, "n_trajectories": 120, "n_zones": 4, "n_drivers": 3}},
        "method": "t2vec", "model": {"dim": 16, "heads": 2},
        "pretrain": {"epochs": 2, "batch_size": 32},
        "adapter": {"task": "destination", "epochs": 3}, "strategy": "full", "seed": 11,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        codes = [main(["pretrain", "--config", str(cfg_path), "--out", str(out)]),
                 main(["finetune", "--config", str(cfg_path), "--out", str(out)])]
        metrics = json.loads((out / "metrics.json").read_text())
        metrics.pop("wall_seconds")
        files = {name: (out / name).read_bytes() for name in
                 ("checkpoint/params.bin", "checkpoint/manifest.json", "finetuned/params.bin", "history.json")}
        outputs.append((codes, metrics, files))
    (codes_a, metrics_a, files_a), (codes_b, metrics_b, files_b) = outputs
    checks = {"exit codes": codes_a == codes_b == [0, 0], "metrics": metrics_a == metrics_b}
    checks.update({name: files_a[name] == files_b[name] for name in files_a})
    report(9, checks, f"two runs with seed 11 compared over {len(files_a)} files and metrics.json")
