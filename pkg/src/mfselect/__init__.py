"""Clean-sample selection for noisy labels via per-instance learning dynamics."""

from .dynamics import (
    InstanceMetrics,
    PredictionSequence,
    SegmentDecomposition,
    compute_metrics,
    forgetting_difficulty,
    memorization_difficulty,
    metric_full,
    metric_simplified,
    record_status,
    score_sequences,
    segment,
)
from .mixture import (
    FitConfig,
    MixtureFit,
    WeibullParams,
    em_fit,
    fit_metric_scores,
    identify_components,
    shift_to_support,
    threshold,
    weibull_mean,
    weibull_pdf,
    weighted_weibull_mle,
)
from .selection import (
    MultiRoundResult,
    RoundConfig,
    SelectionResult,
    compare_strategies,
    run_multiround,
    run_round,
    select_by_ratio,
    select_by_threshold,
    small_loss_select,
)
from .trainer import (
    DynamicsModel,
    SGDTrainer,
    ToyDataset,
    TrainerConfig,
    circular_class_map,
    inject_asymmetric_noise,
    inject_symmetric_noise,
    make_blobs,
    simulate_dynamics,
)
from .evaluation import (
    SelectionStats,
    histogram_export,
    round_trend_report,
    selection_precision_recall,
    test_accuracy,
)
from .logio import (
    ExternalTrainer,
    LogRecord,
    external_round,
    read_dataset_csv,
    read_prediction_log,
    write_dataset_csv,
    write_prediction_log,
)

__version__ = "0.1.0"
