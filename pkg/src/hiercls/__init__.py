"""Hierarchy-aware classification toolkit.

Build class taxonomies, train small classifiers under tree-structured losses
(hierarchical cross-entropy with exponential depth discounting, LCA-distance
soft labels), measure mistake severity against the tree, and sweep the loss
hyperparameters to trace top-1-error versus severity tradeoff curves.
"""

from .taxonomy import (HierarchyError, EdgeListParseError, CycleError,
                       UnknownNodeError, TaxonomyGraph, Taxonomy, load_edges,
                       prune_to_tree, load_taxonomy, apply_edits,
                       randomize_leaves)
from .losses import (EPS, softmax, HxeWeights, hxe_weights,
                     conditionals_from_class_probs, factorized_prob,
                     cross_entropy, hxe_loss, hxe_grad, SoftLabelMatrix,
                     soft_label_matrix, soft_label_loss, soft_grad,
                     conditional_head_loss, conditional_head_grad)
from .metrics import (PredictionBatch, MetricReport, top_k_error,
                      hier_dist_mistake, avg_hier_dist_topk,
                      severity_histogram, compute_report)
from .data import (DataError, Dataset, SplitSpec, dataset_from_csv,
                   dataset_to_csv, split, synth_hierarchical)
from .model import (LossSpec, ClassifierModel, init_model, forward,
                    AdamOptimizer, TrainSchedule, TrainingTrace,
                    TrainingDivergedError, train, fit_polynomial,
                    select_checkpoints, evaluate_model, evaluate_checkpoints)
from .sweep import SweepConfig, parse_sweep_config, run_sweep

__version__ = "0.1.0"
