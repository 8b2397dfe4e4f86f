"""End-to-end acceptance checks. Each test records one pass/fail line (see conftest.py).

The training-based criteria share session fixtures: three PMN seeds at (v, d) = (0.1, 100) and three
PMN/baseline pairs at (0.2, 200), all with the default hyperparameters. Expect ~8 minutes on one core.
"""
import time

import numpy as np
import pytest

from gradcheck import check_module, check_objective, objective_case
import oracles
from pmn.checkpoint import load_checkpoint, save_checkpoint
from pmn.config import DataConfig, RunConfig
from pmn.interpret import attribution_hits, mask_shifts, prototype_fidelity
from pmn.losses import (LossWeights, cross_entropy, r1_feature_to_prototype, r2_prototype_to_feature,
                        r3_prototype_separation, reconstruction_mse)
from pmn.metrics import evaluate
from pmn.model import ModelConfig, MLPHead, PMNModel, PrototypeHead, softmax
from pmn.nn import BatchNorm1d, Conv1d, Deconv1d, Flatten, Linear, ReLU
from pmn.signals import clean_template, default_fault_specs
from pmn.tensor import Rng
from pmn.train import load_data, train_model

SEEDS = (0, 1, 2)
F64 = np.float64


def train_run(seed, augmentation, variant="pmn"):
    cfg = RunConfig(seed=seed, augmentation=augmentation, variant=variant)
    train, test = load_data(cfg)
    res = train_model(cfg, train, test)
    return res, test


@pytest.fixture(scope="session")
def runs_low_noise():
    start = time.process_time()
    runs = [train_run(s, (0.1, 100)) for s in SEEDS]
    return runs, time.process_time() - start


@pytest.fixture(scope="session")
def runs_high_noise():
    return {v: [train_run(s, (0.2, 200), v) for s in SEEDS] for v in ("pmn", "ae-mlp-baseline")}


@pytest.fixture(scope="session")
def class_info():
    specs = default_fault_specs()
    return np.array([clean_template(s) for s in specs]), [s.harmonic_bin() for s in specs]


# ------------------------------------------------------------------ 1-4: exact properties

def layer_cases():
    rng = np.random.default_rng(0)
    bn = BatchNorm1d(3, dtype=F64)
    bn.params["gamma"][...] = rng.uniform(0.5, 2.0, 3)
    bn.params["beta"][...] = rng.normal(size=3)
    relu_x = rng.normal(size=(4, 6))
    relu_x[np.abs(relu_x) < 1e-3] = 0.5
    yield "conv", Conv1d(2, 3, 9, 2, 4, rng=Rng(0), dtype=F64), rng.normal(size=(2, 2, 17)), False
    yield "deconv", Deconv1d(2, 3, 10, 4, 3, rng=Rng(0), dtype=F64), rng.normal(size=(2, 2, 6)), False
    yield "batchnorm/train", bn, rng.normal(2, 3, size=(6, 3, 5)), True
    yield "batchnorm/eval", bn, rng.normal(2, 3, size=(6, 3, 5)), False
    yield "linear", Linear(5, 4, rng=Rng(0), dtype=F64), rng.normal(size=(3, 5)), False
    yield "relu", ReLU(), relu_x, False
    yield "flatten", Flatten(), rng.normal(size=(2, 3, 4)), False
    for metric in ("sqL2", "L1", "cosine"):
        yield f"pm-head/{metric}", PrototypeHead(3, 4, 6, metric, rng=Rng(0), dtype=F64), rng.normal(size=(5, 3)), False
    yield "mlp-head", MLPHead(3, 4, 5, rng=Rng(0), dtype=F64), rng.normal(size=(5, 3)), False


def test_criterion_1_gradient_suite(report):
    start = time.perf_counter()
    errors = {name: check_module(m, x, train=train) for name, m, x, train in layer_cases()}
    for metric in ("sqL2", "L1", "cosine"):
        model, x, y = objective_case(metric, seed=1)
        errors[f"objective/{metric}"] = check_objective(model, x, y, LossWeights(), seed=1)[0]
    model, x, y = objective_case(variant="ae-mlp-baseline", seed=1)
    errors["objective/baseline"] = check_objective(model, x, y, LossWeights(), seed=1)[0]
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = report(1, errors[worst] < 1e-4 and elapsed < 30,
                f"max rel error {errors[worst]:.2e} ({worst}) over {len(errors)} checks, {elapsed:.1f} s")
    assert ok, errors


def test_criterion_2_linear_equivalence(report):
    start = time.perf_counter()
    model = PMNModel(ModelConfig(dtype="float64"), Rng(0))
    z = np.random.default_rng(0).normal(size=(100, model.config.latent_dim))
    dev = np.max(np.abs(softmax(model.head.forward(z)) - softmax(model.linear_equivalent_logits(z))))
    elapsed = time.perf_counter() - start
    assert report(2, dev < 1e-9 and elapsed < 1, f"max probability deviation {dev:.2e}, {elapsed:.2f} s")


def test_criterion_3_loss_oracles(report):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        z, p, probs, labels, rng = oracles.random_instance(seed)
        x, xh = rng.normal(size=(len(z), 7)), rng.normal(size=(len(z), 7))
        worst = max(worst,
                    abs(r1_feature_to_prototype(z, p) - oracles.bf_r1(z, p)),
                    abs(r2_prototype_to_feature(z, p) - oracles.bf_r2(z, p)),
                    abs(r3_prototype_separation(p) - oracles.bf_r3(p)),
                    abs(cross_entropy(probs, labels) - oracles.bf_ce(probs, labels)),
                    abs(reconstruction_mse(x, xh) - oracles.bf_mse(x, xh)))
    elapsed = time.perf_counter() - start
    assert report(3, worst < 1e-12 and elapsed < 5, f"max |diff| {worst:.1e} over 200 instances, {elapsed:.2f} s")


def test_criterion_4_shapes(report):
    shapes = PMNModel(ModelConfig(), Rng(0)).layer_output_shapes()
    expect = [(8, 512), (16, 256), (32, 64), (64, 16), (128, 4), (64,),
              (128, 4), (64, 16), (32, 64), (16, 256), (8, 512), (1024,), (4,)]
    got = [s for name, s in shapes if name != "enc.input"]
    assert report(4, got == expect, f"{len(got)} layer outputs, decoder output {got[11]}"), got


# ------------------------------------------------------------------ 5-9: trained models

def test_criterion_5_synthetic_accuracy(report, runs_low_noise):
    runs, cpu = runs_low_noise
    accs = [res.history[-1].test_acc for res, _ in runs]
    mean = float(np.mean(accs))
    ok = report(5, mean >= 0.95 and cpu < 600,
                f"mean test accuracy {mean:.4f} (seeds {np.round(accs, 4).tolist()}), {cpu:.0f} s CPU")
    assert ok


def test_criterion_6_representation_advantage(report, runs_high_noise):
    pmn = [res.history[-1].r_rps for res, _ in runs_high_noise["pmn"]]
    base = [res.history[-1].r_rps for res, _ in runs_high_noise["ae-mlp-baseline"]]
    wins = sum(a < b for a, b in zip(pmn, base))
    ok = report(6, wins == 3, f"PMN wins {wins}/3: PMN {np.round(pmn, 3).tolist()} vs baseline "
                              f"{np.round(base, 3).tolist()}")
    assert ok


def test_criterion_7_prototype_fidelity(report, runs_low_noise, class_info):
    templates, _ = class_info
    cos = np.concatenate([prototype_fidelity(res.model, templates) for res, _ in runs_low_noise[0]])
    assert report(7, cos.min() >= 0.9, f"min cosine {cos.min():.3f} over {len(cos)} prototypes"), cos


def test_criterion_8_attribution_fidelity(report, runs_low_noise, class_info):
    _, bins = class_info
    rates = [attribution_hits(res.model, test.x, test.labels, bins).mean() for res, test in runs_low_noise[0]]
    ok = report(8, min(rates) >= 0.8, f"top-5 hit rate per seed {np.round(rates, 3).tolist()}")
    assert ok


def test_criterion_9_mask_direction(report, runs_low_noise, class_info):
    _, bins = class_info
    rates = []
    for res, test in runs_low_noise[0]:
        shifts = mask_shifts(res.model, test.x, test.labels, bins)
        rates.append(float(np.mean(shifts[:, 1] > shifts[:, 0])))
    assert report(9, min(rates) >= 0.9, f"fraction with larger min distance per seed {np.round(rates, 3).tolist()}")


# ------------------------------------------------------------------ 10: determinism

def test_criterion_10_determinism(report, tmp_path):
    cfg = RunConfig(seed=3, epochs=3, data=DataConfig(per_class=20))
    train, test = load_data(cfg)
    a = train_model(cfg, train, test, out_dir=tmp_path / "a")
    train_model(cfg, *load_data(cfg), out_dir=tmp_path / "b")
    logs_equal = (tmp_path / "a" / "training_log.csv").read_bytes() == (tmp_path / "b" / "training_log.csv").read_bytes()
    first = evaluate(a.model, test).to_json()
    loaded, meta = load_checkpoint(tmp_path / "a" / "final.pmn")
    save_checkpoint(tmp_path / "again.pmn", loaded, meta["run_config"], meta["epoch"])
    again, _ = load_checkpoint(tmp_path / "again.pmn")
    json_equal = first == evaluate(loaded, test).to_json() == evaluate(again, test).to_json()
    ok = report(10, logs_equal and json_equal, f"training logs equal: {logs_equal}, eval JSON equal: {json_equal}")
    assert ok
