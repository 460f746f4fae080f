"""Budgeted training loop around the evolver steps."""

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Optional

from bnn_evolve.bitcore import FixedProb, rng_derive
from bnn_evolve.config import RunConfig, describe
from bnn_evolve.data import BinaryDataset, fitness_subset, load_mnist, make_batches
from bnn_evolve.errors import ConfigError, EmptyInputError
from bnn_evolve.evolvers import counting_error_select, elite_step, flip_schedule, naive_select
from bnn_evolve.metrics_logger import MetricsLogger, MetricsRecord
from bnn_evolve.network import init_random, write_network
from bnn_evolve.objective import EvaluationCounter, ScoredNetwork, evaluate_accuracy
from bnn_evolve.utils import format_ppm

logger = logging.getLogger(__name__)

# First label of every rng derivation path used by the loop.
INIT_STREAM = 0
FITNESS_STREAM = 1
BATCH_STREAM = 2
STEP_STREAM = 3


@dataclass
class TrainingResult:
    best: ScoredNetwork
    records: list[MetricsRecord] = field(default_factory=list)
    steps: int = 0
    evaluations: int = 0
    stop_reason: str = ""


class Trainer:
    """
    Owns one training run: the current network (or elite), the fitness subset,
    the batch cursor for counting-error steps and the metrics log.
    Budgets are checked between steps; a step always runs to completion.
    """

    def __init__(self, config: RunConfig, train: BinaryDataset, test: BinaryDataset, verbose: bool = True):
        if len(train) == 0 or len(test) == 0:
            raise EmptyInputError("training needs non-empty train and test splits")
        self.config = config
        self.codec = config.codec
        self.train = train
        self.test = test
        self.verbose = verbose
        self.counter = EvaluationCounter()

        size = config.fitness_subset_size
        if size > len(train):
            logger.warning("[Trainer] fitness subset of %d exceeds %d train samples, using all of them", size, len(train))
            size = len(train)
        self.fitness_set = fitness_subset(train, size, rng_derive(config.seed, [FITNESS_STREAM]))

        self._epoch = -1
        self._batches: list[BinaryDataset] = []
        self._cursor = 0

        # naive/counting state
        self.net = None
        self.fitness = None
        # elite state
        self.elite: list[ScoredNetwork] = []
        # child-evaluation pool, open only while run() is active
        self.executor: Optional[Executor] = None

    # --- per-step helpers ---

    def flip_probability(self, step: int) -> FixedProb:
        """Flip probability used by step ``step`` (1-based); step 0 reports the first value."""
        schedule = self.config.schedule
        if schedule is None:
            return self.config.flip_prob
        return flip_schedule(max(step - 1, 0), schedule)

    def _next_batch(self) -> BinaryDataset:
        if self._cursor >= len(self._batches):
            self._epoch += 1
            self._batches = make_batches(self.train, self.config.batch_size, rng_derive(self.config.seed, [BATCH_STREAM, self._epoch]))
            self._cursor = 0
            logger.debug("[Trainer] epoch %d: %d batches", self._epoch, len(self._batches))
        batch = self._batches[self._cursor]
        self._cursor += 1
        return batch

    def _initialize(self) -> ScoredNetwork:
        cfg = self.config
        if cfg.algorithm == "elite":
            for i in range(cfg.elite_size):
                net = init_random(rng_derive(cfg.seed, [INIT_STREAM, i]), cfg.sizes, cfg.depth_bounds)
                ppm = evaluate_accuracy(net, self.fitness_set, self.codec, self.counter).ppm
                self.elite.append(ScoredNetwork(net, ppm, ppm))
            return self._elite_representative()
        self.net = init_random(rng_derive(cfg.seed, [INIT_STREAM, 0]), cfg.sizes, cfg.depth_bounds)
        self.fitness = evaluate_accuracy(self.net, self.fitness_set, self.codec, self.counter)
        return ScoredNetwork(self.net, self.fitness.ppm, self.fitness.ppm)

    def _elite_representative(self) -> ScoredNetwork:
        best = self.elite[0]
        for member in self.elite[1:]:
            if member.current_ppm > best.current_ppm:
                best = member
        return best

    def _step(self, step: int) -> ScoredNetwork:
        cfg = self.config
        rng = rng_derive(cfg.seed, [STEP_STREAM, step])
        p = self.flip_probability(step)
        if cfg.algorithm == "naive":
            self.net, self.fitness = naive_select(self.net, rng, p, self.fitness_set, self.codec, self.fitness, self.counter)
        elif cfg.algorithm == "elite":
            self.elite = elite_step(self.elite, rng, cfg.evolver_config(p), self.fitness_set, self.codec, self.counter, self.executor)
            return self._elite_representative()
        else:
            batch = self._next_batch()
            self.net, batch_fit, _ = counting_error_select(
                self.net, rng, cfg.evolver_config(p), batch, self.codec, self.counter, self.executor
            )
            self.fitness = evaluate_accuracy(self.net, self.fitness_set, self.codec, self.counter)
            logger.debug("[Trainer] step %d: batch %d/%d correct", step, batch_fit.correct, batch_fit.total)
        return ScoredNetwork(self.net, self.fitness.ppm, self.fitness.ppm)

    def _stop_reason(self, step: int, start_ns: int) -> Optional[str]:
        cfg = self.config
        if cfg.step_budget is not None and step >= cfg.step_budget:
            return "step_budget"
        if cfg.evaluation_budget is not None and self.counter.value >= cfg.evaluation_budget:
            return "evaluation_budget"
        if cfg.time_budget_secs is not None and time.perf_counter_ns() - start_ns >= cfg.time_budget_secs * 1_000_000_000:
            return "time_budget"
        return None

    # --- main loop ---

    def run(self) -> TrainingResult:
        cfg = self.config
        print(f"[Trainer] {cfg.algorithm} on sizes {cfg.sizes}, seed {cfg.seed}, {cfg.workers} worker(s)")
        logger.debug("[Trainer] effective configuration:\n%s", describe(cfg))
        start_ns = time.perf_counter_ns()

        # one child pool for the whole run
        pool = ThreadPoolExecutor(max_workers=cfg.workers, thread_name_prefix="bnn-child") if cfg.workers > 1 else nullcontext()
        with pool as self.executor, MetricsLogger(cfg.metrics_out, deterministic=cfg.deterministic_metrics, verbose=self.verbose) as metrics:
            current = self._initialize()
            best = current
            step = 0
            self._record(metrics, step, start_ns, current, test=True)
            stop = self._stop_reason(step, start_ns)

            while stop is None:
                step += 1
                current = self._step(step)
                if current.current_ppm > best.current_ppm:
                    best = current
                stop = self._stop_reason(step, start_ns)
                self._record(metrics, step, start_ns, current, test=stop is not None or step % cfg.eval_every == 0)

            logger.info("[Trainer] stopped after %d steps (%s): %s", step, stop, metrics.summary())
            records = list(metrics.history)
        self.executor = None

        if cfg.model_out:
            write_network(best.net, cfg.model_out)
            logger.info("[Trainer] best network (fitness %s) saved to %s", format_ppm(best.current_ppm), cfg.model_out)
        return TrainingResult(best, records, step, self.counter.value, stop)

    def _record(self, metrics: MetricsLogger, step: int, start_ns: int, current: ScoredNetwork, test: bool) -> MetricsRecord:
        test_ppm = None
        if test:
            test_ppm = evaluate_accuracy(current.net, self.test, self.codec, self.counter).ppm
            logger.info("[Trainer] step %d: fitness %s, test %s", step, format_ppm(current.current_ppm), format_ppm(test_ppm))
        else:
            logger.debug("[Trainer] step %d: fitness %s", step, format_ppm(current.current_ppm))
        elapsed_ms = (time.perf_counter_ns() - start_ns) // 1_000_000
        return metrics.log(step, elapsed_ms, self.counter.value, current.current_ppm, test_ppm, self.flip_probability(step).threshold)


def run_training(config: RunConfig, verbose: bool = True) -> TrainingResult:
    """Load data, then train until a budget runs out; data errors surface before step 1."""
    if not config.data_dir:
        raise ConfigError("no data directory: pass --data-dir, set data_dir, or export MNIST_DATA_DIR")
    train, test = load_mnist(config.data_dir, config.binarize_threshold, config.train_limit, config.test_limit)
    return Trainer(config, train, test, verbose=verbose).run()
