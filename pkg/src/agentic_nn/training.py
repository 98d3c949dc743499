"""Epoch loop: forward, judge, backward on failure, validate, checkpoint."""

from __future__ import annotations

import json
import logging
import random
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backward import BackwardEngine, BackwardResult, OptimizerConfig, VelocityStore, run_backward
from .errors import AnnError
from .evaluation import EvalOutcome, Judge, dataset_metric, failed_outcome
from .forward import ForwardEngine, TaskInstance, Trajectory
from .graph import Network
from .llm import Gateway
from .serialize import block_to_dict, dumps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Toggles:
    momentum: bool = True
    performance_validation: bool = True
    backward: bool = True


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 1
    train_path: str | None = None
    validation_path: str | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    toggles: Toggles = field(default_factory=Toggles)
    seed: int = 0
    parallel_tasks: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.parallel_tasks < 1:
            raise ValueError("parallel_tasks must be >= 1")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_metric: float
    validation_metric: float
    pool_sizes: list[int]
    revision: int
    accepted_updates: int
    rejected_updates: int
    routing_fallbacks: int
    backward_passes: int
    task_failures: int
    input_tokens: int
    output_tokens: int
    cost_estimate: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def load_tasks(path: str | Path) -> list[TaskInstance]:
    """Tasks from a JSON array or a JSON-lines file. Task ids must be unique."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        rows = json.loads(text)
    else:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    tasks = [TaskInstance.from_dict(r) for r in rows]
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate task ids in {path}")
    return tasks


class RunRecorder:
    """Writes run artifacts. Files are only ever added, never rewritten."""

    def __init__(self, run_dir: str | Path | None):
        self.run_dir = Path(run_dir) if run_dir else None
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    def trajectory(self, traj: Trajectory, epoch: int | None = None) -> None:
        if not self.run_dir:
            return
        sub = self.run_dir / "trajectories" / (f"epoch-{epoch}" if epoch is not None else "")
        sub.mkdir(parents=True, exist_ok=True)
        traj.save(sub)

    def step(self, n: int, task_id: str, epoch: int, res: BackwardResult) -> None:
        if not self.run_dir:
            return
        doc = {
            "step": n,
            "epoch": epoch,
            "task_id": task_id,
            "report": res.report.to_dict() if res.report else None,
            "flagged_layers": sorted(res.flagged_layers),
            "layer_order": res.layer_order,
            "rejected": [
                {"layer_index": layer, "failures": [asdict(f) for f in rej.failures]} for layer, rej in res.rejected
            ],
            "errors": res.errors,
        }
        (self.run_dir / f"step-{n}.global.json").write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
        if res.accepted:
            blocks = {
                "step": n,
                "epoch": epoch,
                "accepted": [{"layer_index": layer, "block": block_to_dict(b)} for layer, b in res.accepted],
            }
            (self.run_dir / f"step-{n}.block.json").write_text(json.dumps(blocks, indent=2, ensure_ascii=False) + "\n")

    def checkpoint(self, epoch: int, network: Network) -> None:
        if self.run_dir:
            (self.run_dir / f"epoch-{epoch}.network.json").write_text(dumps(network), encoding="utf-8")

    def history(self, metrics: EpochMetrics) -> None:
        if self.run_dir:
            with open(self.run_dir / "history.jsonl", "a", encoding="utf-8") as fh:
                fh.write(metrics.to_json() + "\n")


class Trainer:
    def __init__(
        self,
        gateway: Gateway,
        forward: ForwardEngine,
        judge: Judge,
        backward: BackwardEngine,
        config: RunConfig,
        recorder: RunRecorder | None = None,
    ):
        self.gateway = gateway
        self.forward = forward
        self.judge = judge
        self.backward = backward
        self.config = config
        self.recorder = recorder or RunRecorder(None)
        self.step = 0
        # layer order of every local pass, for auditing the reverse-order rule
        self.local_orders: list[list[int]] = []

    def _one(self, network: Network, task: TaskInstance) -> tuple[Trajectory | None, EvalOutcome]:
        try:
            traj = self.forward.run_forward(network, task)
        except AnnError as e:
            log.warning("task %s failed in forward pass: %s", task.task_id, e)
            return None, failed_outcome(task, f"{type(e).__name__}: {e}")
        return traj, self.judge.evaluate(task, traj.final_output)

    def evaluate_outcomes(self, network: Network, dataset: Sequence[TaskInstance]) -> list[EvalOutcome]:
        if self.config.parallel_tasks > 1:
            with ThreadPoolExecutor(self.config.parallel_tasks) as pool:
                return [o for _, o in pool.map(lambda t: self._one(network, t), dataset)]
        return [self._one(network, t)[1] for t in dataset]

    def evaluate(self, network: Network, dataset: Sequence[TaskInstance]) -> float:
        """Forward and judge every task, no backward. The network is not touched."""
        if not dataset:
            raise ValueError("cannot evaluate an empty dataset")
        return dataset_metric(self.evaluate_outcomes(network, dataset))

    def train(
        self,
        network: Network,
        train_tasks: Sequence[TaskInstance],
        validation_tasks: Sequence[TaskInstance],
    ) -> tuple[Network, list[EpochMetrics]]:
        if not train_tasks or not validation_tasks:
            raise ValueError("training needs non-empty train and validation sets")
        toggles = self.config.toggles
        history = []
        velocity = VelocityStore()
        for epoch in range(1, self.config.epochs + 1):
            velocity.clear()
            order = list(train_tasks)
            random.Random(self.config.seed + epoch).shuffle(order)
            outcomes = []
            accepted = rejected = fallbacks = backward_passes = failures = 0
            for task in order:
                traj, outcome = self._one(network, task)
                outcomes.append(outcome)
                if traj is None:
                    failures += 1
                    continue
                self.recorder.trajectory(traj, epoch)
                fallbacks += len(traj.events)
                if outcome.passed or not toggles.backward:
                    continue
                self.step += 1
                backward_passes += 1
                res = run_backward(
                    self.backward,
                    network,
                    traj,
                    outcome,
                    task,
                    velocity,
                    momentum=toggles.momentum,
                    perf_validation=toggles.performance_validation,
                    validation_tasks=validation_tasks,
                    step=self.step,
                )
                self.local_orders.append(list(res.layer_order))
                network = res.network
                accepted += len(res.accepted)
                rejected += len(res.rejected)
                self.recorder.step(self.step, task.task_id, epoch, res)

            usage = self.gateway.usage
            metrics = EpochMetrics(
                epoch=epoch,
                train_metric=dataset_metric(outcomes),
                validation_metric=self.evaluate(network, validation_tasks),
                pool_sizes=network.pool_sizes,
                revision=network.revision,
                accepted_updates=accepted,
                rejected_updates=rejected,
                routing_fallbacks=fallbacks,
                backward_passes=backward_passes,
                task_failures=failures,
                input_tokens=usage.input_tokens,
                output_tokens=usage.output_tokens,
                cost_estimate=usage.cumulative_cost_estimate,
            )
            log.info(
                "epoch %d: train %.4f validation %.4f pools %s",
                epoch, metrics.train_metric, metrics.validation_metric, metrics.pool_sizes,
            )
            history.append(metrics)
            self.recorder.checkpoint(epoch, network)
            self.recorder.history(metrics)
        return network, history
