"""Reproducible generalization and classification runs.

:func:`run_generalization_experiment` trains a narrow student to zero error,
widens it with inactive units and compares the test error of randomly
perturbed wide and narrow networks. :func:`run_classification_suite` runs the
landscape demonstrations of :mod:`semiflat.suite` and collects pass/fail
evidence.
"""

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from .embedding import EmbedKind, EmbedSpec, embed
from .errors import Diverged, NotConverged, TrainingFailed
from .landscape import verify_stationary
from .network import Activation, Dataset, LossKind, forward
from .rng import stream
from .trainer import TrainConfig, init_params, train

CSV_HEADER = ("H", "activation", "ratio_mean", "ratio_stderr", "base_gen_error")
# data seed whose draw admits five-unit zero-error fits for both activations;
# how much the smooth ratio grows with width varies strongly between draws
DEFAULT_SEED = 201
TEACHER_STREAM = 999


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of the perturbation study.

    ``H_sweep`` lists the wide sizes; ``None`` means ``student_hidden`` up
    to ``student_hidden + 15``. ``max_extra_hidden`` bounds the upward search
    for a student width that reaches zero error.
    """

    activation: Activation = Activation.TANH
    teacher_hidden: int = 1
    student_hidden: int = 5
    n_train: int = 10
    noise_std: float = 0.1
    H_sweep: tuple = None
    trials: int = 1000
    perturb_ratio: float = 0.01
    n_test: int = 1000
    seed: int = DEFAULT_SEED
    K: float = 2.0
    target_loss: float = 1e-29
    perturb_baseline: bool = True
    surplus_zero: bool = False
    threads: int = None
    max_extra_hidden: int = 3

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        sweep = self.H_sweep
        if sweep is None:
            sweep = range(self.student_hidden, self.student_hidden + 16)
        object.__setattr__(self, "H_sweep", tuple(int(h) for h in sweep))
        if not self.perturb_ratio > 0.0:
            raise ValueError("perturb_ratio must be positive")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(h < self.student_hidden for h in self.H_sweep):
            raise ValueError("every H in H_sweep must be >= student_hidden")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")


@dataclass(frozen=True)
class ExperimentRow:
    H: int
    activation: str
    ratio_mean: float
    ratio_stderr: float
    base_gen_error: float


@dataclass(frozen=True, eq=False)
class ExperimentData:
    train: Dataset
    test: Dataset
    teacher: object


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    rows: list
    student: object
    rho: float
    train_loss: float
    trend_tau: float
    trend_pvalue: float
    extra: dict = field(default_factory=dict)


def generate_data(cfg, seed=None):
    """Teacher, noisy training set on ``[-1, 1]`` and a noiseless test set."""
    seed = cfg.seed if seed is None else seed
    teacher = init_params(1, cfg.teacher_hidden, 1, cfg.activation, seed, stream_id=TEACHER_STREAM)
    rng = stream(seed, 0)
    x = rng.uniform(-1.0, 1.0, size=(cfg.n_train, 1))
    y = forward(teacher, x) + cfg.noise_std * rng.standard_normal((cfg.n_train, 1))
    x_test = stream(seed, 3).uniform(-1.0, 1.0, size=(cfg.n_test, 1))
    return ExperimentData(
        Dataset(x, y, LossKind.SQUARED),
        Dataset(x_test, forward(teacher, x_test), LossKind.SQUARED),
        teacher,
    )


def gen_error(net, test):
    """Mean over test points of ``||y - f(x)||^2 / 2``."""
    r = forward(net, test.inputs) - test.targets
    return 0.5 * float(np.sum(r * r)) / test.n


def train_student(cfg, data):
    """Zero-error student, searching widths upward from ``student_hidden``."""
    tcfg = TrainConfig(target_loss=cfg.target_loss, require_target=True, seed=cfg.seed,
                       relu_pattern_init=True)
    last = None
    for h in range(cfg.student_hidden, cfg.student_hidden + cfg.max_extra_hidden + 1):
        init = init_params(1, h, 1, cfg.activation, cfg.seed)
        try:
            res = train(init, data.train, tcfg)
        except (NotConverged, Diverged) as exc:
            last = exc
            continue
        if not verify_stationary(res.params, data.train).passed:
            last = TrainingFailed(f"width {h} result is not stationary")
            continue
        return res
    raise TrainingFailed(f"no zero-error student up to width {h}: {last.detail if last else ''}")


def _unit_noise(rng, units, d1, m, rho):
    # one (w, v) draw per unit so shared units get identical noise at every H
    eps = rho * rng.standard_normal((units, d1 + m))
    return eps[:, :d1], eps[:, d1:]


def _trial_ratio(cfg, wide, narrow, test, rho, h, trial):
    rng = stream(cfg.seed, 5, h, trial)
    d1, m = wide.input_dim + 1, wide.output_dim
    ew, ev = _unit_noise(rng, wide.hidden, d1, m, rho)
    pw = wide.replace(w=wide.w + ew, v=wide.v + ev)
    h0 = narrow.hidden
    if cfg.perturb_baseline:
        pn = narrow.replace(w=narrow.w + ew[:h0], v=narrow.v + ev[:h0])
    else:
        pn = narrow
    return gen_error(pw, test) / gen_error(pn, test)


def widen(cfg, narrow, h, rho):
    """Inactive-units embedding of ``narrow`` into width ``h``."""
    k = h - narrow.hidden
    if cfg.surplus_zero or k == 0:
        v_extra = np.zeros((k, narrow.output_dim))
    else:
        v_extra = rho * stream(cfg.seed, 4, h).standard_normal((k, narrow.output_dim))
    kind = EmbedKind.INACTIVE_UNITS if narrow.activation.smooth else EmbedKind.INACTIVE_UNITS_RELU
    return embed(narrow, EmbedSpec(kind, h, K=cfg.K, v_extra=v_extra))


def _threads(n):
    return max(1, os.cpu_count() or 1) if n is None else max(1, int(n))


def run_generalization_experiment(cfg, data=None):
    """Perturbed test-error ratios of inactive-unit embeddings over ``H_sweep``.

    Trial ``t`` at width ``H`` draws its noise from the stream
    ``(seed, 5, H, t)``, so results do not depend on thread count or order.
    """
    data = generate_data(cfg) if data is None else data
    res = train_student(cfg, data)
    narrow = res.params
    rho = cfg.perturb_ratio * float(np.linalg.norm(narrow.flat()))
    base = gen_error(narrow, data.test)
    sweep = [h for h in cfg.H_sweep if h >= narrow.hidden]
    rows = []
    with ThreadPoolExecutor(max_workers=_threads(cfg.threads)) as pool:
        for h in sweep:
            wide = widen(cfg, narrow, h, rho)
            ratios = np.fromiter(
                pool.map(lambda t: _trial_ratio(cfg, wide, narrow, data.test, rho, h, t),
                         range(cfg.trials)),
                dtype=np.float64, count=cfg.trials,
            )
            stderr = float(np.std(ratios, ddof=1) / np.sqrt(cfg.trials)) if cfg.trials > 1 else 0.0
            rows.append(ExperimentRow(h, cfg.activation.value, float(np.mean(ratios)), stderr, base))
    tau, p = trend_test(rows)
    return ExperimentResult(rows, narrow, rho, res.final_loss, tau, p)


def trend_test(rows):
    """One-sided Kendall tau test for an increasing ratio over ``H``."""
    if len(rows) < 2:
        return 0.0, 1.0
    hs = [r.H for r in rows]
    ratios = [r.ratio_mean for r in rows]
    stat = kendalltau(hs, ratios, alternative="greater")
    if np.isnan(stat.statistic):
        # constant ratios carry no trend
        return 0.0, 1.0
    return float(stat.statistic), float(stat.pvalue)


def rows_to_csv(rows):
    """CSV text with a fixed header; floats use shortest round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.H, r.activation, repr(r.ratio_mean), repr(r.ratio_stderr),
                    repr(r.base_gen_error)])
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return [ExperimentRow(int(h), a, float(m), float(s), float(b)) for h, a, m, s, b in reader]


PACBAYES_HEADER = ("E", "activation", "kl_total", "bound")


@dataclass(frozen=True)
class PacBayesRow:
    E: int
    activation: str
    kl_total: float
    bound: float


def pacbayes_sweep(seed=DEFAULT_SEED, e_max=15, pb_cfg=None, student_hidden=5):
    """KL and bound of inactive-unit embeddings with ``E = 1..e_max`` surplus units.

    Both activations are trained on their own teacher data. The surplus
    output weights are all ones for both, so that the surplus input block
    of the smooth Hessian is nonzero. Covariance blocks at the zero
    threshold are floored.
    """
    from .landscape import surplus_hessian_blocks
    from .network import hessian
    from .pacbayes import PacBayesConfig, bounded_loss, kl_relu, kl_smooth, pac_bayes_bound

    pb_cfg = pb_cfg or PacBayesConfig()
    rows = []
    for act in (Activation.TANH, Activation.RELU):
        cfg = ExperimentConfig(activation=act, seed=seed, student_hidden=student_hidden)
        data = generate_data(cfg)
        narrow = train_student(cfg, data).params
        h_narrow = hessian(narrow, data.train)
        train_loss = float(np.mean(bounded_loss(
            0.5 * np.sum((forward(narrow, data.train.inputs) - data.train.targets) ** 2, axis=1))))
        n = data.train.n
        for e in range(1, e_max + 1):
            spec_kind = EmbedKind.INACTIVE_UNITS if act.smooth else EmbedKind.INACTIVE_UNITS_RELU
            v_extra = np.ones((e, narrow.output_dim))
            wide = embed(narrow, EmbedSpec(spec_kind, narrow.hidden + e, K=pb_cfg.K, v_extra=v_extra))
            if act.smooth:
                s = surplus_hessian_blocks(wide, data.train, spec_kind, narrow.hidden).ww
                kl = kl_smooth(h_narrow, s, float(np.linalg.norm(wide.flat())), cfg=pb_cfg,
                               floor=True)
            else:
                # Gaussian blocks only: the narrow copy and the surplus output weights
                norm = float(np.hypot(np.linalg.norm(narrow.flat()),
                                      np.linalg.norm(wide.v[narrow.hidden:])))
                kl = kl_relu(h_narrow, norm, cfg=pb_cfg, floor=True)
            rows.append(PacBayesRow(e, act.value, kl.total, pac_bayes_bound(train_loss, kl, n, pb_cfg)))
    return rows


def pacbayes_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PACBAYES_HEADER)
    for r in rows:
        w.writerow([r.E, r.activation, repr(r.kl_total), repr(r.bound)])
    return buf.getvalue()


def run_classification_suite(seed=0, threads=None, checks=None):
    """Run the landscape demonstrations; returns a JSON-ready report.

    Checks run concurrently but are reported in a fixed order, and each
    builds its own seeded instances, so the report does not depend on the
    thread count.
    """
    from . import suite

    checks = suite.CHECKS if checks is None else checks
    with ThreadPoolExecutor(max_workers=_threads(threads)) as pool:
        results = list(pool.map(lambda c: c(seed=seed), checks))
    results.append(suite.check_tampered_spec())
    return {
        "seed": seed,
        "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
