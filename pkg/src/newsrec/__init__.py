"""Temporal-dynamics matrix factorization and diversity-regularised latent factor
models for news recommendation, with time-aware evaluation."""

from .corpus import (Dataset, Interaction, NewsItem, Session, decompose_timestamp, load_dataset,
                     profile_time_series, sentiment_to_rating, sessionize, time_based_split)
from .diversity_glm import (GlmModel, RegularizationSpec, elastic_net_cd, irls_lp, predict_glm,
                            soft_threshold, train_als_elastic_net)
from .metrics import (EvaluationReport, ItemFeatures, RankedList, composite_tradeoff, evaluate_run,
                      f1_at_k, intra_list_diversity, novelty_score, precision_at_k, recall_at_k, rmse)
from .sampling import LabeledPair, label_implicit, sample_negatives
from .temporal_mf import (DecayPopularity, MfConfig, MfModel, decay_weight, predict, recommend_top_k,
                          train_sgd)

__version__ = "0.1.0"
