"""Cost function over a labeled set, global annealing of the transform matrix.

The cost of a candidate transform M over a labeled set is

    C = - sum_{k in +} tanh(eta * gap_k) + sum_{k in -} tanh(eta * gap_k)

where gap_k is the spectral gap of image k after encoding and threshold
scaling, {+} holds the images of the target digit and {-} the rest.  Each
tanh term lies in [-1, 1], so |C| is bounded by the set size, and swapping
the two label sets negates C exactly.

C is minimized with generalized simulated annealing (scipy's dual_annealing
engine, restarts included) under a hard evaluation budget, optionally
followed by a derivative-free simplex polish of the best point with whatever
budget remains.  Every run is a pure function of its seed: per-image work
fans out to a worker pool but is reduced in image-id order, and the
warm-start state that accelerates successive threshold solves is owned by
the parent process, so results do not depend on the worker count.
"""

from __future__ import annotations

import multiprocessing
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import dual_annealing, minimize

from .classify import ClassifierConfig, Model, classify
from .encoding import (
    BracketExhausted,
    DEFAULT_FTOL,
    NoThresholdReachable,
    TransformMatrix,
    solve_threshold_alpha,
)
from .lattice import ArrayParams
from .spectra import gap_from_eigvals

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@dataclass(frozen=True)
class AnnealParams:
    """Generalized-simulated-annealing knobs; defaults follow common practice."""

    initial_temperature: float = 5230.0
    visiting: float = 2.62         # q_v, Tsallis visiting distribution
    acceptance: float = -5.0       # q_a, generalized Metropolis
    restart_ratio: float = 0.02    # reanneal when T falls below ratio * T0

    def __post_init__(self):
        if not 1.0 < self.visiting <= 3.0:
            raise ValueError("visiting parameter must lie in (1, 3]")
        if self.initial_temperature <= 0:
            raise ValueError("initial temperature must be positive")
        if not 0 < self.restart_ratio < 1:
            raise ValueError("restart_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    budget: int
    seed: int
    eta: float = 4.0
    bounds: tuple[float, float] = (-1.0, 1.0)
    anneal: AnnealParams = field(default_factory=AnnealParams)
    local_search: bool = True
    polish_fraction: float = 0.1   # share of the budget reserved for the polish
    workers: int = 1

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.bounds[0] >= self.bounds[1]:
            raise ValueError("bounds must be an increasing interval")
        if not 0 <= self.polish_fraction < 1:
            raise ValueError("polish_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class CostReport:
    total_cost: float
    per_image_gaps: list            # (image id, gap, expected sign) triples
    evaluations_used: int
    threshold_failures: int = 0


@dataclass(frozen=True)
class Metrics:
    """Binary scores; ratios that would divide by zero are None, never 0."""

    accuracy: float
    precision: float | None
    recall: float | None
    tp: int
    fp: int
    tn: int
    fn: int


class BudgetExhausted(Exception):
    """Internal control flow: the evaluation budget is spent."""


# ---------------------------------------------------------------------------
# per-image gap evaluation, shared by the serial path and pool workers

_WORKER: dict = {}


def _init_worker(payload):
    _WORKER.update(payload)
    if threadpool_limits is not None:
        # one BLAS thread per worker; the 64x64 solves gain nothing from more
        _WORKER["_limits"] = threadpool_limits(limits=1)


def _gaps_for_chunk(task):
    """Gaps for one slice of the image list under the transform in `task`."""
    lo, hi, entries, warm = task
    p = _WORKER
    images = p["pixels"][lo:hi]
    gamma = p["array"].gamma
    gaps = np.empty(len(images))
    alphas = np.full(len(images), np.nan)
    failures = 0
    for i, img in enumerate(images):
        if p["encoding_mode"] == "matrix8":
            pump = np.abs(entries @ img)
        else:
            pump = np.abs(entries @ img.ravel()).reshape(img.shape)
        gains = pump.ravel()
        if gains.max() <= 0.0:
            gaps[i] = -2.0 * gamma
            failures += 1
            continue
        w0 = warm[i] if warm is not None and np.isfinite(warm[i]) else None
        try:
            alpha, w, _ = solve_threshold_alpha(
                gains, p["array"], method=p["method"], lse_beta=p["lse_beta"],
                ftol=p["ftol"], warm_alpha=w0,
            )
        except (NoThresholdReachable, BracketExhausted):
            gaps[i] = -2.0 * gamma
            failures += 1
            continue
        gaps[i], _, _, _ = gap_from_eigvals(w, p["delta"], gamma)
        alphas[i] = alpha
    return gaps, alphas, failures


class CostEngine:
    """Evaluates the training cost for candidate transforms, reusing state.

    Owns the (optional) worker pool and the per-image warm-start roots.  The
    warm starts are shipped to workers and collected back here, so the
    computed costs are identical whatever the worker count.  Use as a context
    manager, or call close().
    """

    def __init__(self, images, array: ArrayParams, classifier_config: ClassifierConfig,
                 eta: float, workers: int = 1, ftol: float = DEFAULT_FTOL):
        images = sorted(images, key=lambda im: im.id)
        self.ids = np.array([im.id for im in images])
        self.signs = np.where(
            np.array([im.label for im in images]) == classifier_config.target_digit,
            1.0,
            -1.0,
        )
        self.eta = eta
        self.n = len(images)
        if self.n == 0:
            raise ValueError("labeled set must be nonempty")
        payload = {
            "pixels": np.stack([im.pixels for im in images]),
            "array": array,
            "delta": classifier_config.delta,
            "method": classifier_config.threshold_method,
            "lse_beta": classifier_config.lse_beta,
            "encoding_mode": classifier_config.encoding_mode,
            "ftol": ftol,
        }
        self.warm = np.full(self.n, np.nan)
        side = array.rows if classifier_config.encoding_mode == "matrix8" else array.n_sites
        self._matrix_shape = (side, side)
        n_chunks = max(1, min(self.n, workers * 2 if workers > 1 else 1))
        edges = np.linspace(0, self.n, n_chunks + 1).astype(int)
        self.chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        self.pool = None
        if workers > 1:
            ctx = multiprocessing.get_context("fork")
            self.pool = ctx.Pool(
                processes=workers, initializer=_init_worker, initargs=(payload,)
            )
        _init_worker(payload)    # serial path and main-process fallback

    def evaluate(self, entries: np.ndarray) -> CostReport:
        entries = np.asarray(entries, dtype=float).reshape(self._matrix_shape)
        tasks = [
            (lo, hi, entries, self.warm[lo:hi].copy()) for lo, hi in self.chunks
        ]
        if self.pool is not None:
            results = self.pool.map(_gaps_for_chunk, tasks)
        else:
            results = [_gaps_for_chunk(t) for t in tasks]
        gaps = np.concatenate([r[0] for r in results])
        alphas = np.concatenate([r[1] for r in results])
        failures = int(sum(r[2] for r in results))
        self.warm = alphas
        total = float(np.sum(-self.signs * np.tanh(self.eta * gaps)))
        per_image = [
            (int(self.ids[i]), float(gaps[i]), int(self.signs[i]))
            for i in range(self.n)
        ]
        return CostReport(
            total_cost=total,
            per_image_gaps=per_image,
            evaluations_used=1,
            threshold_failures=failures,
        )

    def close(self):
        if self.pool is not None:
            self.pool.terminate()
            self.pool.join()
            self.pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def cost(
    transform: TransformMatrix,
    labeled_images,
    array: ArrayParams,
    train_config: TrainConfig,
    classifier_config: ClassifierConfig,
    engine: CostEngine | None = None,
) -> CostReport:
    """One evaluation of the annealing objective for the given transform."""
    if engine is not None:
        return engine.evaluate(transform.entries)
    with CostEngine(
        labeled_images, array, classifier_config, train_config.eta,
        workers=train_config.workers,
    ) as eng:
        return eng.evaluate(transform.entries)


# ---------------------------------------------------------------------------
# annealing


def _scheduled_temperature(anneal: AnnealParams, eval_index: int, n_params: int) -> float:
    """Visiting temperature of the annealing schedule at a given evaluation.

    The engine performs 2*n_params objective evaluations per temperature
    step, so this reconstruction is exact between restarts and approximate
    around them; it is logged for convergence diagnostics only.
    """
    qv = anneal.visiting
    t = max(1, 1 + (eval_index - 1) // (2 * n_params))
    t1 = 2.0 ** (qv - 1.0) - 1.0
    t2 = (1.0 + t) ** (qv - 1.0) - 1.0
    return anneal.initial_temperature * t1 / t2


def dual_anneal(
    train_set,
    array: ArrayParams,
    train_config: TrainConfig,
    classifier_config: ClassifierConfig,
    log_path=None,
) -> tuple[Model, CostReport]:
    """Minimize the training cost over the transform entries.

    Runs generalized simulated annealing within the entry bounds under a hard
    budget of full-dataset cost evaluations, then (when enabled) spends the
    reserved remainder of the budget on a Nelder-Mead polish of the best
    point.  Returns the model with the lowest cost ever observed plus its
    cost report.  Identical seeds and configs give bit-identical results.
    """
    side = array.rows if classifier_config.encoding_mode == "matrix8" else array.n_sites
    n_params = side * side
    lo, hi = train_config.bounds
    x0 = np.random.default_rng((train_config.seed, 1)).uniform(lo, hi, n_params)

    budget = train_config.budget
    if train_config.local_search and budget > n_params + 2:
        anneal_budget = max(1, budget - int(round(train_config.polish_fraction * budget)))
    else:
        anneal_budget = budget

    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_file:
        log_file.write("evaluation,temperature,cost,best_cost\n")

    state = {"count": 0, "limit": anneal_budget, "best": (np.inf, None, 0),
             "best_report": None}

    with CostEngine(
        train_set, array, classifier_config, train_config.eta,
        workers=train_config.workers,
    ) as engine:

        def objective(x):
            if state["count"] >= state["limit"]:
                raise BudgetExhausted()
            state["count"] += 1
            report = engine.evaluate(x)
            c = report.total_cost
            if c < state["best"][0]:
                state["best"] = (c, x.copy(), state["count"])
                state["best_report"] = report
            if log_file:
                temp = _scheduled_temperature(
                    train_config.anneal, state["count"], n_params
                )
                log_file.write(
                    f"{state['count']},{temp!r},{c!r},{state['best'][0]!r}\n"
                )
                log_file.flush()
            return c

        try:
            dual_annealing(
                objective,
                bounds=[(lo, hi)] * n_params,
                x0=x0,
                maxiter=1_000_000,
                maxfun=anneal_budget,
                initial_temp=train_config.anneal.initial_temperature,
                visit=train_config.anneal.visiting,
                accept=train_config.anneal.acceptance,
                restart_temp_ratio=train_config.anneal.restart_ratio,
                no_local_search=True,
                rng=np.random.default_rng((train_config.seed, 2)),
            )
        except BudgetExhausted:
            pass

        state["limit"] = budget
        remaining = budget - state["count"]
        if train_config.local_search and remaining > n_params + 1:
            x_start = state["best"][1] if state["best"][1] is not None else x0
            try:
                minimize(
                    objective,
                    x_start,
                    method="Nelder-Mead",
                    bounds=[(lo, hi)] * n_params,
                    options={"maxfev": remaining, "xatol": 1e-6, "fatol": 1e-10},
                )
            except BudgetExhausted:
                pass

        best_cost, best_x, best_at = state["best"]
        if best_x is None:       # budget was 0-ish; cannot happen with budget >= 1
            best_x = x0
        if best_at <= 1 and budget > 1:
            warnings.warn(
                "annealing found no improvement over the initial matrix",
                stacklevel=2,
            )
        transform = TransformMatrix(
            entries=best_x.reshape(side, side),
            encoding_mode=classifier_config.encoding_mode,
        )
        best_report = state["best_report"]
        final_report = CostReport(
            total_cost=best_report.total_cost,
            per_image_gaps=best_report.per_image_gaps,
            evaluations_used=state["count"],
            threshold_failures=best_report.threshold_failures,
        )
    if log_file:
        log_file.close()

    provenance = {
        "seed": train_config.seed,
        "budget": budget,
        "budget_used": state["count"],
        "final_cost": best_cost,
        "dataset_sha": getattr(train_set, "fingerprint", ""),
        "eta": train_config.eta,
        "bounds": list(train_config.bounds),
        "anneal": {
            "initial_temperature": train_config.anneal.initial_temperature,
            "visiting": train_config.anneal.visiting,
            "acceptance": train_config.anneal.acceptance,
            "restart_ratio": train_config.anneal.restart_ratio,
        },
        "local_search": train_config.local_search,
    }
    model = Model(
        transform=transform, array=array, config=classifier_config,
        provenance=provenance,
    )
    return model, final_report


def evaluate(model: Model, labeled_images) -> Metrics:
    """Confusion counts and the three scores of the classifier on a set."""
    images = sorted(labeled_images, key=lambda im: im.id)
    if not images:
        raise ValueError("labeled set must be nonempty")
    target = model.config.target_digit
    tp = fp = tn = fn = 0
    for im in images:
        predicted = classify(im, model).yes
        actual = im.label == target
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    total = tp + fp + tn + fn
    return Metrics(
        accuracy=(tp + tn) / total,
        precision=tp / (tp + fp) if tp + fp else None,
        recall=tp / (tp + fn) if tp + fn else None,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )
