// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: weighted accuracy, prediction-uncertainty reduction
// and the McNemar significance test, plus cross-validation fold aggregation.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "emobev/common.hpp"

namespace emobev {

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  long long positives() const { return tp + fn; }
  long long negatives() const { return tn + fp; }
};

/// (TP * N/P + TN) / (2N). Requires P > 0 and N > 0.
double weighted_accuracy(const ConfusionCounts& c);

double plain_accuracy(const ConfusionCounts& c);

/// Binary prediction uncertainty in bits:
/// I(p) = -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0.
double uncertainty(double p);

/// Prediction Uncertainty Reduction from model m to model n:
/// R = I(p_m) - I(p_n).
double pur(double p_m, double p_n);

/// Two-sided McNemar p-value from the discordant-pair counts b and c.
/// Exact binomial test at rate 0.5 for b+c < 25, chi-square with continuity
/// correction otherwise; b+c = 0 gives p = 1 by convention.
double mcnemar(long long b, long long c);

/// Survival function of the chi-square distribution with 1 dof.
double chi2_sf_1dof(double x);

constexpr std::array<const char*, 5> kBehaviorNames = {"acceptance", "blame", "positivity",
                                                       "negativity", "sadness"};

struct PredictionRecord {
  std::string session_id;
  int behavior = 0;  // 0..4
  int label = 0;     // ground truth
  double logit = 0.0;
  int fold = 0;
  int predicted() const { return logit > 0.0 ? 1 : 0; }
};

struct BehaviorAccuracyTable {
  std::array<double, 5> accuracy{};       // percent, pooled over all folds
  std::array<long long, 5> n_correct{};
  std::array<long long, 5> n_total{};
  std::array<bool, 5> present{};
  double average = 0.0;  // unweighted mean over present behaviors, percent
};

/// Pools test predictions across folds into per-behavior accuracies and the
/// unweighted average over behaviors that are present. A (session, behavior)
/// pair predicted more than once is an error.
BehaviorAccuracyTable aggregate_folds(const std::vector<PredictionRecord>& predictions);

std::string accuracy_table_csv(const BehaviorAccuracyTable& t);
std::string accuracy_table_json(const BehaviorAccuracyTable& t);

// Prediction dump format: CSV with header session_id,behavior,label,logit,fold
std::string predictions_to_csv(const std::vector<PredictionRecord>& predictions);
std::vector<PredictionRecord> predictions_from_csv(const std::string& text);

}  // namespace emobev
