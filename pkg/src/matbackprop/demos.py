"""End-to-end toy experiments: log-covariance classification and J2 segmentation training."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import adjusted_rand_score

from . import netgraph as ng
from .data import CovarianceTaskConfig, SegmentationTaskConfig, covariance_dataset, segmentation_instance
from .errors import ContractError
from .io import dump_json, write_jsonl
from .ncuts import check_j2_iterate, j2_forward, spectral_inference
from .spectral import GapPolicy, log_spec


@dataclass
class DemoConfig:
    task: str = "o2p"
    m: int = 32
    d: int = 8
    k: int = 2
    hidden: int = 2
    epochs: int = 30
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 1
    epsilon: float = 1e-3
    seed: int = 0
    output_dir: str = "out"
    path: str = "svd"
    n_per_class: int = 200
    height: int = 16
    width: int = 16
    n_train_images: int = 8
    n_test_images: int = 8
    init_bias: float = 0.5

    def __post_init__(self):
        if self.task not in ("o2p", "ncuts"):
            raise ContractError(f"unknown task {self.task!r}")
        for name in ("m", "d", "k", "hidden", "batch_size", "n_per_class", "height", "width",
                     "n_train_images", "n_test_images"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.epochs < 0 or self.epsilon < 0:
            raise ContractError("epochs and epsilon must be nonnegative")

    @classmethod
    def defaults(cls, task: str, **overrides) -> "DemoConfig":
        base = dict(task=task)
        if task == "ncuts":
            base.update(k=3, d=6, hidden=2, epochs=30, learning_rate=NCUTS_LR, batch_size=1,
                        m=16 * 16, init_bias=0.5)
        else:
            base.update(learning_rate=O2P_LR)
        base.update(overrides)
        cfg = cls(**base)
        if cfg.task == "ncuts":
            cfg.m = cfg.height * cfg.width
        return cfg

    @classmethod
    def from_mapping(cls, task: str, values: dict[str, str]) -> "DemoConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in types:
                raise ContractError(f"unknown config key {key!r}")
            kind = types[key]
            parsed[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
        parsed.pop("task", None)
        return cls.defaults(task, **parsed)

    def to_dict(self):
        return dataclasses.asdict(self)


# Calibrated step sizes for the toy problems (see scripts/calibrate_demos.py).
O2P_LR = 1e-2
NCUTS_LR = 3e-3


# -- covariance classification -----------------------------------------------------


def o2p_pipeline(cfg: DemoConfig, rng) -> ng.Pipeline:
    layers = [
        ng.Linear.init(rng, cfg.d, cfg.hidden, bias=cfg.init_bias),
        ng.Rectifier(),
        ng.DeepO2P(log_spec(cfg.epsilon), cfg.path, GapPolicy(action="clamp")),
        ng.Flatten(),
        ng.Linear.init(rng, cfg.hidden * cfg.hidden, 1, scale=0.01),
    ]
    return ng.Pipeline(layers, ng.LogisticLoss())


def accuracy(p: ng.Pipeline, dataset) -> float:
    hits = [(float(p.predict(x)[0, 0]) > 0) == bool(y) for x, y in dataset]
    return float(np.mean(hits))


@dataclass
class O2PResult:
    config: dict
    train_accuracy: float
    test_accuracy: float
    baseline_test_accuracy: float
    final_loss: float
    log: list[dict] = field(repr=False, default_factory=list)
    baseline_log: list[dict] = field(repr=False, default_factory=list)

    def summary(self):
        d = dataclasses.asdict(self)
        d.pop("log")
        d.pop("baseline_log")
        return d


def run_o2p_demo(cfg: DemoConfig) -> O2PResult:
    """Train linear -> rectifier -> log-covariance -> linear -> logistic end to end.

    The baseline keeps the randomly initialized feature layer fixed and trains
    only the classifier on top of the same pooling.
    """
    rng = np.random.default_rng(cfg.seed)
    task = CovarianceTaskConfig(m=cfg.m, d=cfg.d, n_per_class=cfg.n_per_class)
    train = covariance_dataset(task, rng)
    test = covariance_dataset(task, rng)
    init_state = rng.bit_generator.state

    sgd = ng.SgdConfig(cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.epochs, cfg.seed)

    def diagnostics(p):
        return {"train_accuracy": accuracy(p, train)}

    rng.bit_generator.state = init_state
    model = o2p_pipeline(cfg, rng)
    log = ng.sgd_train(model, train, sgd, diagnostics)

    rng.bit_generator.state = init_state
    baseline = o2p_pipeline(cfg, rng)
    head = baseline.layers[-1].params
    base_log = ng.sgd_train(baseline, train, sgd, diagnostics, params=head)

    return O2PResult(
        config=cfg.to_dict(),
        train_accuracy=accuracy(model, train),
        test_accuracy=accuracy(model, test),
        baseline_test_accuracy=accuracy(baseline, test),
        final_loss=log.records[-1]["loss"],
        log=log.records,
        baseline_log=base_log.records,
    )


# -- segmentation ------------------------------------------------------------------------


def ncuts_pipeline(cfg: DemoConfig, rng) -> ng.Pipeline:
    """Per-pixel features ``[relu(X A + b), 1]`` and affinity ``W = F F^T``.

    ``k - 1`` learned features plus the constant column give rank(W) <= k with
    the all-ones vector (which lies in range(E)) always present, and W > 0.
    """
    layers = [
        ng.Linear.init(rng, cfg.d, cfg.k - 1, bias=cfg.init_bias),
        ng.Rectifier(),
        ng.AppendOnes(),
        ng.Affinity(np.eye(cfg.k)),
    ]
    return ng.Pipeline(layers, ng.J2Loss())


def segmentation_task(cfg: DemoConfig) -> SegmentationTaskConfig:
    if cfg.d < 2:
        raise ContractError("segmentation demo needs d >= 2 input channels")
    return SegmentationTaskConfig(height=cfg.height, width=cfg.width, k=cfg.k,
                                  n_informative=2, n_nuisance=cfg.d - 2)


@dataclass
class NcutsResult:
    config: dict
    final_j2: list[float]
    final_rank: list[int]
    test_j2: list[float]
    ari: list[float]
    baseline_ari: list[float]
    lemma_checks: int
    lemma_applicable: int
    log: list[dict] = field(repr=False, default_factory=list)
    trajectory: list[dict] = field(repr=False, default_factory=list)

    @property
    def mean_ari(self):
        return float(np.mean(self.ari))

    @property
    def mean_baseline_ari(self):
        return float(np.mean(self.baseline_ari))

    def summary(self):
        d = dataclasses.asdict(self)
        d.pop("log")
        d.pop("trajectory")
        d.update(mean_ari=self.mean_ari, mean_baseline_ari=self.mean_baseline_ari,
                 max_final_j2=max(self.final_j2))
        return d


def _segment_scores(p, instances, k):
    scores = []
    for inst in instances:
        W = p.predict(inst.F)
        labels = spectral_inference(W, [k], inst.image_shape)[0]
        scores.append(float(adjusted_rand_score(inst.labels, labels)))
    return scores


def run_ncuts_demo(cfg: DemoConfig) -> NcutsResult:
    """Train the feature layer with J2 and segment held-out images at the true k.

    Every training forward pass is checked against the rank lemma; a violation
    raises :class:`~matbackprop.errors.RankLemmaViolation`.
    """
    rng = np.random.default_rng(cfg.seed)
    task = segmentation_task(cfg)
    train = [segmentation_instance(task, rng) for _ in range(cfg.n_train_images)]
    test = [segmentation_instance(task, rng) for _ in range(cfg.n_test_images)]
    p = ncuts_pipeline(cfg, rng)
    init_params = [w.copy() for w in p.params]
    dataset = [(inst.F, inst.E) for inst in train]

    trajectory = []
    counts = {"checks": 0, "applicable": 0}

    def hook(step, caches, losses):
        for c in caches:
            rep = check_j2_iterate(c.loss_cache)
            counts["checks"] += 1
            counts["applicable"] += int(rep.implication_applies)
            trajectory.append({"step": step, "j2": c.loss_cache.value, "rank_W": rep.rank_a,
                               "rank_target": rep.rank_b})

    def diagnostics(p):
        ranks, values = [], []
        for inst in train:
            value, cache = j2_forward(p.predict(inst.F), inst.E)
            ranks.append(cache.rank_W)
            values.append(value)
        return {"max_j2": max(values), "ranks": ranks}

    sgd = ng.SgdConfig(cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.epochs, cfg.seed)
    log = ng.sgd_train(p, dataset, sgd, diagnostics, step_hook=hook)

    final_j2, final_rank = [], []
    for inst in train:
        value, cache = j2_forward(p.predict(inst.F), inst.E)
        check_j2_iterate(cache)
        final_j2.append(value)
        final_rank.append(cache.rank_W)
    test_j2 = [j2_forward(p.predict(inst.F), inst.E)[0] for inst in test]
    ari = _segment_scores(p, test, cfg.k)

    for w, w0 in zip(p.params, init_params):
        w[...] = w0
    baseline_ari = _segment_scores(p, test, cfg.k)

    return NcutsResult(cfg.to_dict(), final_j2, final_rank, test_j2, ari, baseline_ari,
                       counts["checks"], counts["applicable"], log.records, trajectory)


def write_outputs(result, out_dir, prefix):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(result.log, out / f"{prefix}_log.jsonl")
    if getattr(result, "trajectory", None):
        write_jsonl(result.trajectory, out / f"{prefix}_rank_trajectory.jsonl")
    if getattr(result, "baseline_log", None):
        write_jsonl(result.baseline_log, out / f"{prefix}_baseline_log.jsonl")
    dump_json(result.summary(), out / f"{prefix}_summary.json")
