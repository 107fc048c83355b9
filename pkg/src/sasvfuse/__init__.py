"""sasvfuse: multi-model, multi-level fusion toolkit for spoofing-aware
speaker verification.

Countermeasure embeddings from several frozen models are projected, fused by
concatenation or a pooling strategy (tap/tsp/sap/asp), turned into a
two-logit countermeasure score by a trainable CM block, and combined with
ASV cosine scores by a trainable predictor. Evaluation uses the SV-EER /
SPF-EER / SASV-EER metric family, with top-k score ensembling and histogram
emission on top.
"""

from . import cli, dataio, ensemble, fusion, metrics, numerics, pooling, selftest, trainer
from .dataio import (LABELS, EmbeddingStore, SynthData, SynthSpec, Trial,
                     TrialFeatures, assemble_features, cosine_score,
                     generate_synthetic, parse_enrollment_map, parse_protocol,
                     read_embeddings, write_embeddings, write_enrollment_map,
                     write_protocol)
from .ensemble import SystemScores, ensemble_mean, read_score_csv, select_top_k, write_score_csv
from .errors import (ConfigError, DataError, DegenerateInputError,
                     NumericalError, SasvFuseError)
from .fusion import (ForwardTrace, FusionParams, ModelConfig, asv_mean_score,
                     cm_axis_score, fit_cm_axis, init_model, load_checkpoint,
                     save_checkpoint, score_sum_baseline)
from .metrics import (EvalReport, HistogramData, ScoredTrial, det_curve, eer,
                      eval_report, histogram, write_histogram_csv,
                      write_report_csv)
from .numerics import AdamState, Rng, adam_step, cross_entropy, matmul, softmax
from .pooling import (POOL_MODES, PoolConfig, Pooled, PoolParams,
                      init_pool_params, pool_backward, pool_forward,
                      pool_output_dim)
from .trainer import (EpochStats, TrainConfig, TrainLog, evaluate_scores,
                      select_best_epoch, train, write_train_log)

__version__ = "0.1.0"
