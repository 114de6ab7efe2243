"""One selection round and the multi-round driver.

A round trains for E epochs while recording each instance's per-epoch
status, scores every instance, fits the score mixture, thresholds at the
noisy component's scale parameter, and hands the surviving instances (and
the trained model) to the next round. Ratio-based and small-loss selectors
are provided as baselines and as the fallback when the mixture fit
degenerates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import evaluation
from .dynamics import score_sequences
from .errors import MixtureFitError
from .mixture import FitConfig, MixtureFit, fit_metric_scores, threshold

STRATEGIES = ("mixture_threshold", "ratio", "small_loss")


@dataclass
class RoundConfig:
    epochs: int = 30
    rounds: int = 1
    lam: float = 1.0
    metric_kind: str = "simplified"
    strategy: str = "mixture_threshold"
    ratio: float = 0.9
    reset_model_per_round: bool = False
    # small-loss ranks at this epoch index (None -> final); when
    # best_validation is set and the trainer reports validation accuracy,
    # the best-validation epoch wins instead.
    small_loss_epoch: int | None = None
    small_loss_best_validation: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.rounds < 1:
            raise ValueError("epochs and rounds must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.metric_kind not in ("full", "simplified"):
            raise ValueError(f"unknown metric_kind {self.metric_kind!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must be in (0, 1]")


@dataclass
class SelectionResult:
    round_index: int
    selected_ids: list
    metric_scores: dict
    threshold: float | None = None
    fit: MixtureFit | None = None
    stats: evaluation.SelectionStats | None = None
    test_accuracy: float | None = None
    used_fallback: bool = False
    warning: str | None = None


@dataclass
class MultiRoundResult:
    rounds: list[SelectionResult]
    final_ids: list
    truncated: bool = False


def select_by_threshold(scores, tau: float, round_index: int = 0) -> SelectionResult:
    """Keep every instance whose score is strictly below ``tau``."""
    if not scores:
        raise ValueError("scores must be nonempty")
    selected = sorted(i for i, s in scores.items() if s < tau)
    warning = None
    if not selected:
        warning = f"threshold {tau:.6g} lies below every score; selection is empty"
    return SelectionResult(
        round_index=round_index,
        selected_ids=selected,
        metric_scores=dict(scores),
        threshold=tau,
        warning=warning,
    )


def select_by_ratio(scores, ratio: float, round_index: int = 0) -> SelectionResult:
    """Keep the ceil(ratio * n) smallest-scoring instances.

    Ties at the cut are broken by ascending instance id, which makes the
    selection deterministic.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    if not scores:
        raise ValueError("scores must be nonempty")
    keep = math.ceil(ratio * len(scores))
    ranked = sorted(scores.items(), key=lambda kv: (kv[1], kv[0]))
    selected = sorted(i for i, _ in ranked[:keep])
    return SelectionResult(
        round_index=round_index,
        selected_ids=selected,
        metric_scores=dict(scores),
    )


def small_loss_select(
    epoch_losses, ratio: float, epoch: int | None = None, round_index: int = 0
) -> SelectionResult:
    """Keep the ratio fraction with the smallest loss at the chosen epoch.

    ``epoch`` indexes each instance's per-epoch loss list (None means the
    final epoch). Instances with no recorded losses trigger an error that
    names them.
    """
    if not epoch_losses:
        raise ValueError("epoch_losses must be nonempty")
    missing = sorted((i for i, v in epoch_losses.items() if v is None or len(v) == 0),
                     key=str)
    if missing:
        raise ValueError(f"no recorded losses for ids: {missing[:10]}")
    idx = -1 if epoch is None else epoch
    at_epoch = {i: float(v[idx]) for i, v in epoch_losses.items()}
    result = select_by_ratio(at_epoch, ratio, round_index=round_index)
    return result


def _apply_strategy(scores, log, config: RoundConfig, fit_config: FitConfig,
                    round_index: int) -> SelectionResult:
    if config.strategy == "mixture_threshold":
        if len(set(scores.values())) == 1:
            # every instance scored identically: no separation evidence, and
            # a ratio cut would drop instances purely by id; keep them all
            result = SelectionResult(
                round_index=round_index,
                selected_ids=sorted(scores),
                metric_scores=dict(scores),
                warning="all scores identical; kept the full set",
            )
            return result
        try:
            fit = fit_metric_scores(
                [scores[i] for i in sorted(scores)], fit_config
            )
            if fit.degenerate:
                # no separable noisy component: the clean/noisy roles are
                # arbitrary, so thresholding at the noisy scale would cut
                # instances at random; keep everything instead
                result = SelectionResult(
                    round_index=round_index,
                    selected_ids=sorted(scores),
                    metric_scores=dict(scores),
                    warning="degenerate mixture fit (no separable noisy "
                    "component); kept the full set",
                )
                result.fit = fit
                return result
            tau = threshold(fit, fit_config.threshold_rule)
            result = select_by_threshold(scores, tau, round_index=round_index)
            result.fit = fit
            return result
        except MixtureFitError as exc:
            result = select_by_ratio(scores, config.ratio, round_index=round_index)
            result.used_fallback = True
            result.warning = f"mixture fit failed ({exc}); fell back to ratio selection"
            return result
    if config.strategy == "ratio":
        return select_by_ratio(scores, config.ratio, round_index=round_index)
    # small_loss
    if log.losses is None:
        raise ValueError("small_loss strategy requires per-epoch losses")
    epoch = config.small_loss_epoch
    if config.small_loss_best_validation and log.val_accuracies:
        epoch = int(np.argmax(log.val_accuracies))
    return small_loss_select(log.losses, config.ratio, epoch=epoch,
                             round_index=round_index)


def run_round(
    dataset,
    trainer,
    config: RoundConfig,
    fit_config: FitConfig | None = None,
    ids=None,
    round_index: int = 1,
    clean_mask=None,
):
    """Train for one round, score the dynamics, and select.

    Returns (SelectionResult, trainer); the trainer keeps its model state
    for the next round. When ``clean_mask`` is given the result carries
    precision/recall against it, and when the dataset has a test split and
    the trainer can predict, the round's test accuracy as well.
    """
    fit_config = fit_config or FitConfig()
    if ids is None:
        ids = sorted(dataset.train_ids)
    ids = list(ids)
    if not ids:
        raise ValueError("cannot run a round on an empty training set")

    log = trainer.fit_round(dataset, ids, config.epochs)
    scores = score_sequences(log.sequences, config.metric_kind, config.lam)
    result = _apply_strategy(scores, log, config, fit_config, round_index)

    if clean_mask is not None:
        result.stats = evaluation.selection_precision_recall(
            result.selected_ids, clean_mask, round_index=round_index
        )
    if hasattr(trainer, "predict") and dataset is not None:
        test_pos = getattr(dataset, "test_positions", None)
        if test_pos is not None and len(test_pos):
            result.test_accuracy = evaluation.test_accuracy(
                trainer,
                dataset.features[test_pos],
                dataset.true_labels[test_pos],
            )
    return result, trainer


def run_multiround(
    dataset,
    trainer,
    config: RoundConfig,
    fit_config: FitConfig | None = None,
) -> MultiRoundResult:
    """Iterate selection rounds, each training on the previous survivors.

    Sequences are rebuilt from scratch every round; the model carries over
    unless ``config.reset_model_per_round`` is set. Recall in the per-round
    stats is always measured against the clean instances of the *original*
    training set, so the round trend is comparable. Stops early, flagged
    truncated, if a round selects nothing.
    """
    current_ids = sorted(dataset.train_ids)
    full_mask = dataset.clean_mask() if hasattr(dataset, "clean_mask") else None
    rounds: list[SelectionResult] = []
    truncated = False
    for round_index in range(1, config.rounds + 1):
        if config.reset_model_per_round and round_index > 1 and hasattr(trainer, "reset"):
            trainer.reset()
        result, trainer = run_round(
            dataset,
            trainer,
            config,
            fit_config,
            ids=current_ids,
            round_index=round_index,
            clean_mask=full_mask,
        )
        rounds.append(result)
        if not result.selected_ids:
            truncated = True
            break
        current_ids = result.selected_ids
    return MultiRoundResult(rounds=rounds, final_ids=current_ids, truncated=truncated)


def compare_strategies(
    dataset,
    make_trainer,
    config: RoundConfig,
    fit_config: FitConfig | None = None,
    strategies=STRATEGIES,
):
    """Run the same benchmark once per strategy and tabulate the outcome.

    ``make_trainer`` is a zero-argument factory so every strategy starts
    from an identical model. Returns one dict per strategy with the final
    round's kept count, precision, recall and test accuracy.
    """
    rows = []
    for strategy in strategies:
        result = run_multiround(
            dataset,
            make_trainer(),
            replace(config, strategy=strategy),
            fit_config,
        )
        last = result.rounds[-1]
        rows.append(
            {
                "strategy": strategy,
                "kept": len(last.selected_ids),
                "precision": last.stats.precision if last.stats else None,
                "recall": last.stats.recall if last.stats else None,
                "accuracy": last.test_accuracy,
            }
        )
    return rows
