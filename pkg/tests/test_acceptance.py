"""Acceptance criteria, one test each. The terminal summary prints a PASS/FAIL line per criterion."""
import hashlib
import json
import math
import socket
import threading
import time

import numpy as np
import pytest
import torch

from aprpose.checkpoint import load_model, save_model
from aprpose.config import load_config
from aprpose.data import (
    DatasetManifest, FrameRecord, load_manifest, save_manifest, write_synthetic_dataset,
)
from aprpose.evaluation import evaluate, table_predictor
from aprpose.formats import read_cloud, write_cloud
from aprpose.geometry import Pose, minmax_fit
from aprpose.gradcheck import run_gradcheck
from aprpose.inference import PoseEstimator, prepare_input
from aprpose.lidar import BevConfig, bev_histogram, farthest_point_sample
from aprpose.model import AprModel, desk_config, reduced_config
from aprpose.model.backbones import CnnBackbone, PointBackbone
from aprpose.model.tokens import grid_order
from aprpose.model.transformer import TransformerBranch
from aprpose.pipeline import build_dataset, estimator_for, evaluate_estimator, train
from aprpose.service import InitPoseServer
from aprpose.training import LossParams, combined_loss, fit
from oracles import bev_cell, fps_bruteforce

# Overfit run schedule and pass thresholds.
OVERFIT_TRAIN = {"epochs": 240, "batch_size": 8, "lr": 3e-4, "lr_period": 80, "lr_factor": 0.5}
OVERFIT_MAX_POSITION_M = 3.0
OVERFIT_MAX_ORIENTATION_DEG = 5.0
OVERFIT_MAX_SECONDS = 30 * 60


def detail(record_property, text):
    record_property("detail", text)


@pytest.mark.criterion("Gradient correctness")
def test_gradient_correctness(record_property):
    t0 = time.perf_counter()
    reports = [run_gradcheck(m, seed=0) for m in ("image", "points")]
    seconds = time.perf_counter() - t0
    worst = max(r.max_relative_error for r in reports)
    detail(record_property, ", ".join(
        f"{r.modality} {r.max_relative_error:.2e} over {r.coordinates} coords" for r in reports)
        + f"; {seconds:.0f}s (limit 1e-3, 300s)")
    for r in reports:
        model = AprModel(reduced_config(r.modality))
        assert r.parameters == len(list(model.parameters())) + 2  # every tensor plus s_x, s_q
        assert r.coordinates == sum(p.numel() for p in model.parameters()) + 2
    assert worst < 1e-3
    assert seconds < 300


@pytest.mark.criterion("Loss identities")
def test_loss_identities(record_property):
    rng = np.random.default_rng(2024)
    f64 = torch.float64
    worst_grad = 0.0
    for _ in range(1000):
        l_p, l_o = (torch.tensor(v, dtype=f64) for v in rng.uniform(0, 10, 2))
        s_x, s_q = rng.uniform(-5, 5, 2)
        assert combined_loss(l_p, l_o, LossParams(0, 0, dtype=f64)).item() == (l_p + l_o).item()
        zero = torch.zeros((), dtype=f64)
        perfect = combined_loss(zero, zero, LossParams(s_x, s_q, dtype=f64)).item()
        assert perfect == s_x + s_q
        lp = LossParams(s_x, s_q, dtype=f64)
        combined_loss(l_p, l_o, lp).backward()
        worst_grad = max(worst_grad, abs(lp.s_x.grad.item() - (-l_p.item() * math.exp(-s_x) + 1)))
    detail(record_property, f"1000 draws, max |ds_x error| {worst_grad:.1e} (limit 1e-9)")
    assert worst_grad < 1e-9


@pytest.mark.criterion("FPS oracle equivalence")
def test_fps_oracle(record_property):
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 65))
        k = int(rng.integers(1, n + 1))
        cloud = np.concatenate([rng.uniform(-10, 10, (n, 3)), np.zeros((n, 1))], 1).astype(np.float32)
        start = int(rng.integers(n))
        if farthest_point_sample(cloud, k, start=start).tolist() != fps_bruteforce(cloud, k, start):
            mismatches += 1
    detail(record_property, f"{100 - mismatches}/100 clouds match exactly")
    assert mismatches == 0


@pytest.mark.criterion("BEV conservation")
def test_bev_conservation(record_property):
    raw = BevConfig(cap=None)
    bad = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 500))
        xyz = np.stack([rng.uniform(-8, 40, n), rng.uniform(-24, 24, n), rng.uniform(-3, 3, n)], 1)
        cloud = np.concatenate([xyz, np.zeros((n, 1))], 1).astype(np.float32)
        grid = bev_histogram(cloud, raw)
        expect = np.zeros(2)
        for x, y, z in cloud[:, :3].astype(np.float64):
            r, c = bev_cell(x, y)
            if 0 <= r < 256 and 0 <= c < 256:
                expect[int(z > 0.0)] += 1
        if not np.array_equal(grid.sum(axis=(1, 2)), expect):
            bad += 1
    single = bev_histogram(np.array([[16.0, 0.0, 1.0, 0.0]], np.float32))
    cell = np.argwhere(single).tolist()
    detail(record_property, f"{100 - bad}/100 clouds conserve counts; worked example at {cell}")
    assert bad == 0
    assert cell == [[1, 128, 128]]


@pytest.mark.criterion("Shape and structure")
def test_shape_and_structure(record_property, synth_dir):
    torch.manual_seed(0)
    with torch.no_grad():
        fx, fq = CnnBackbone(3, desk_config("image").backbone_channels, 256).eval()(torch.randn(1, 3, 256, 256))
        bx, bq = CnnBackbone(2, desk_config("bev").backbone_channels, 256).eval()(torch.rand(1, 2, 256, 256))
    shapes = {tuple(t.shape[1:]) for t in (fq, bq)}, {tuple(t.shape[1:]) for t in (fx, bx)}
    assert shapes == ({(40, 32, 32)}, {(112, 16, 16)})

    m = load_manifest(synth_dir / "train.csv")
    x = prepare_input("points", read_cloud(m.payload_path(m.records[0], "points"))).unsqueeze(0)
    cfg = desk_config("points")
    backbone = PointBackbone(cfg.d_feat, cfg.sa1_widths, cfg.sa2_widths, radii=cfg.point_radii,
                             nsample=cfg.nsample).eval()
    with torch.no_grad():
        vectors, centroids = backbone(x)
    assert tuple(vectors.shape) == (1, 128, cfg.d_feat)
    order = grid_order(centroids)[0]
    z = centroids[0, :, 2]
    group0 = z[order[:16]]
    assert group0.max() <= z[order[16:]].min()
    assert sorted(group0.tolist()) == sorted(z.sort().values[:16].tolist())

    branch = TransformerBranch(cfg.d_model, cfg.heads, cfg.layers, cfg.ffn, cfg.dropout).double().eval()
    gen = torch.Generator().manual_seed(1)
    tokens = torch.randn(2, 128, cfg.d_model, generator=gen, dtype=torch.float64)
    encodings = torch.randn(128, cfg.d_model, generator=gen, dtype=torch.float64)
    perm = torch.randperm(128, generator=gen)
    with torch.no_grad():
        a = branch(tokens + encodings)
        b = branch(tokens[:, perm] + encodings[perm])
    gap = (a - b).abs().max().item()
    detail(record_property, f"endpoints (40,32,32)/(112,16,16), 128 point tokens, permutation gap {gap:.1e}")
    assert gap < 1e-6


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    cfg = load_config(overrides={"seed": 0, "modality": "points", "synth.frames": 64,
                                 **{f"train.{k}": v for k, v in OVERFIT_TRAIN.items()}})
    paths = write_synthetic_dataset(str(out), cfg.synth_config())
    manifest = load_manifest(paths["train"])
    model, _, stats, logs = train(manifest, cfg)
    report = evaluate_estimator(estimator_for(model, stats, cfg), manifest)
    return report, logs, time.perf_counter() - t0


@pytest.mark.criterion("Synthetic overfit")
def test_synthetic_overfit(record_property, overfit_run):
    report, logs, seconds = overfit_run
    pos, ori = report.median_position_error, report.median_orientation_error
    detail(record_property, f"{len(report.results)} frames, {len(logs)} epochs: median {pos:.2f} m / {ori:.2f} deg "
                            f"in {seconds / 60:.1f} min (limits {OVERFIT_MAX_POSITION_M} m / "
                            f"{OVERFIT_MAX_ORIENTATION_DEG} deg / {OVERFIT_MAX_SECONDS // 60} min)")
    assert len(report.results) == 64 and len(logs) <= 300
    assert pos < OVERFIT_MAX_POSITION_M
    assert ori < OVERFIT_MAX_ORIENTATION_DEG
    assert seconds < OVERFIT_MAX_SECONDS


@pytest.mark.criterion("Determinism")
def test_determinism(record_property, synth_dir):
    cfg = load_config(overrides={"seed": 11, "modality": "points", "train.batch_size": 2, "train.lr": 1e-3})
    manifest = load_manifest(synth_dir / "train.csv")
    runs = []
    for _ in range(2):
        dataset, stats = build_dataset(manifest, cfg)
        torch.manual_seed(cfg.seed)
        model = AprModel(reduced_config("points"))
        _, _, losses = fit(model, dataset, cfg.train_config(), max_steps=3)
        report = evaluate_estimator(estimator_for(model, stats, cfg), manifest)
        runs.append((losses, report))
    (l1, r1), (l2, r2) = runs
    detail(record_property, f"first 3 losses {['%.6f' % v for v in l1]} repeated; reports equal: {r1 == r2}")
    assert len(l1) == 3 and l1 == l2
    assert r1 == r2 and len(r1.results) == len(manifest.records)


@pytest.mark.criterion("Metric oracle")
def test_metric_oracle(record_property):
    ident = (1.0, 0.0, 0.0, 0.0)

    def run(truth, pred):
        mk = lambda poses: DatasetManifest("/x", [FrameRecord(str(i), p) for i, p in enumerate(poses)])  # noqa: E731
        r = evaluate(table_predictor(mk(pred)), mk(truth))
        return r.median_position_error, r.median_orientation_error

    rng = np.random.default_rng(0)
    truth = [Pose.from_components(rng.uniform(0, 100, 3), rng.normal(size=4)) for _ in range(5)]
    origin = Pose.from_components((0, 0, 0), ident)
    got = [
        run(truth, truth),
        run([origin], [Pose.from_components((1, 0, 0), ident)]),
        run([origin, origin], [Pose.from_components((1, 0, 0), ident), Pose.from_components((0, 3, 0), ident)]),
    ]
    detail(record_property, f"{got}")
    assert got == [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]


def _rpc(f, obj) -> dict:
    f.write((obj if isinstance(obj, str) else json.dumps(obj)).encode() + b"\n")
    f.flush()
    return json.loads(f.readline())


@pytest.mark.criterion("Service conformance")
def test_service_conformance(record_property, checkpoints, synth_dir):
    path = checkpoints["points"]
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    estimator = PoseEstimator.from_checkpoint(str(path))
    m = load_manifest(synth_dir / "train.csv")
    clouds = [m.payload_path(r, "points") for r in m.records]
    oracle = {c: estimator.estimate_file(c)[0] for c in clouds}
    server = InitPoseServer(estimator, "127.0.0.1", 0)
    server.start_background()
    try:
        with socket.create_connection(("127.0.0.1", server.port), timeout=60) as s, s.makefile("rwb") as f:
            assert _rpc(f, {"ping": True}) == {"pong": True}
            assert _rpc(f, "{broken")["status"] == "error"
            assert _rpc(f, {"id": "after", "modality": "points", "path": clouds[0]})["status"] == "ok"

        worst, problems = [0.0], []

        def client(k):
            with socket.create_connection(("127.0.0.1", server.port), timeout=120) as s, s.makefile("rwb") as f:
                for j in range(2):
                    c, rid = clouds[(k + j) % len(clouds)], f"{k}.{j}"
                    r = _rpc(f, {"id": rid, "modality": "points", "path": c})
                    if r.get("id") != rid or r.get("status") != "ok":
                        problems.append(r)
                        continue
                    d = max(np.abs(np.subtract(r["position"], oracle[c].position)).max(),
                            np.abs(np.subtract(r["quaternion"], oracle[c].orientation)).max())
                    worst[0] = max(worst[0], float(d))

        threads = [threading.Thread(target=client, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        server.shutdown()
        server.server_close()
    unchanged = hashlib.sha256(path.read_bytes()).hexdigest() == digest
    detail(record_property, f"8 clients x 2 requests, max deviation {worst[0]:.1e} (limit 1e-5), "
                            f"checkpoint unchanged: {unchanged}")
    assert problems == []
    assert worst[0] <= 1e-5
    assert unchanged


@pytest.mark.criterion("Format round trips")
def test_format_round_trips(record_property, tmp_path):
    rng = np.random.default_rng(5)
    cloud = rng.normal(size=(1000, 4)).astype(np.float32)
    cloud[:4, 0] = [-0.0, np.inf, -np.inf, np.float32(1e-45)]
    write_cloud(tmp_path / "c.bin", cloud)
    cloud_ok = read_cloud(tmp_path / "c.bin").tobytes() == cloud.tobytes()

    torch.manual_seed(3)
    model = AprModel(reduced_config("image"))
    stats = minmax_fit(rng.uniform(0, 100, (10, 3)))
    save_model(tmp_path / "a.bin", model, LossParams(0.5, -2.5), stats)
    loaded, lp, stats2, ckpt = load_model(tmp_path / "a.bin")
    arrays_ok = all(p.detach().numpy().tobytes() == ckpt.arrays[f"model.{n}"].tobytes()
                    for n, p in model.named_parameters())
    save_model(tmp_path / "b.bin", loaded, lp, stats2)
    ckpt_ok = arrays_ok and (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    recs = [FrameRecord(f"f{i}", Pose.from_components(rng.uniform(-1e3, 1e3, 3), rng.normal(size=4)))
            for i in range(20)]
    save_manifest(DatasetManifest(str(tmp_path), recs), tmp_path / "m1.csv")
    first = load_manifest(tmp_path / "m1.csv")
    save_manifest(first, tmp_path / "m2.csv")
    second = load_manifest(tmp_path / "m2.csv")
    manifest_ok = first.records == second.records and \
        (tmp_path / "m1.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()
    detail(record_property, f"cloud {cloud_ok}, checkpoint {ckpt_ok}, manifest {manifest_ok}")
    assert cloud_ok and ckpt_ok and manifest_ok
