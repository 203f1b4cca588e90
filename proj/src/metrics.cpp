// SPDX-License-Identifier: Apache-2.0
#include "emobev/metrics.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace emobev {

double weighted_accuracy(const ConfusionCounts& c) {
  const double p = static_cast<double>(c.positives());
  const double n = static_cast<double>(c.negatives());
  if (p <= 0 || n <= 0) throw std::invalid_argument("weighted_accuracy: needs P > 0 and N > 0");
  return (static_cast<double>(c.tp) * n / p + static_cast<double>(c.tn)) / (2.0 * n);
}

double plain_accuracy(const ConfusionCounts& c) {
  const double total = static_cast<double>(c.tp + c.tn + c.fp + c.fn);
  if (total <= 0) throw std::invalid_argument("plain_accuracy: empty counts");
  return static_cast<double>(c.tp + c.tn) / total;
}

double uncertainty(double p) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("uncertainty: p must be in [0,1]");
  auto term = [](double q) { return q > 0.0 ? -q * std::log2(q) : 0.0; };
  return term(p) + term(1.0 - p);
}

double pur(double p_m, double p_n) { return uncertainty(p_m) - uncertainty(p_n); }

double chi2_sf_1dof(double x) {
  if (x < 0.0) throw std::invalid_argument("chi2_sf_1dof: x must be >= 0");
  // For X ~ chi2(1), P(X > x) = erfc(sqrt(x/2)).
  return std::erfc(std::sqrt(x / 2.0));
}

double mcnemar(long long b, long long c) {
  if (b < 0 || c < 0) throw std::invalid_argument("mcnemar: counts must be >= 0");
  const long long n = b + c;
  if (n == 0) return 1.0;
  if (n < 25) {
    // exact two-sided binomial at rate 0.5
    const long long k = b < c ? b : c;
    double tail = 0.0;
    double coeff = 1.0;  // C(n, 0)
    for (long long i = 0; i <= k; ++i) {
      tail += coeff;
      coeff = coeff * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    const double p = 2.0 * tail * std::pow(0.5, static_cast<double>(n));
    return p > 1.0 ? 1.0 : p;
  }
  const double diff = std::abs(static_cast<double>(b - c)) - 1.0;  // continuity correction
  const double chi2 = diff * diff / static_cast<double>(n);
  return chi2_sf_1dof(chi2);
}

BehaviorAccuracyTable aggregate_folds(const std::vector<PredictionRecord>& predictions) {
  BehaviorAccuracyTable t;
  std::set<std::pair<std::string, int>> seen;
  for (const PredictionRecord& r : predictions) {
    if (r.behavior < 0 || r.behavior >= 5)
      throw DataError("aggregate_folds: behavior index out of range");
    if (!seen.insert({r.session_id, r.behavior}).second)
      throw DataError("aggregate_folds: session '" + r.session_id +
                      "' predicted twice for behavior " + std::to_string(r.behavior));
    const auto bi = static_cast<std::size_t>(r.behavior);
    t.n_total[bi] += 1;
    if (r.predicted() == r.label) t.n_correct[bi] += 1;
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t bi = 0; bi < 5; ++bi) {
    t.present[bi] = t.n_total[bi] > 0;
    if (t.present[bi]) {
      t.accuracy[bi] = 100.0 * static_cast<double>(t.n_correct[bi]) / static_cast<double>(t.n_total[bi]);
      sum += t.accuracy[bi];
      ++present;
    }
  }
  if (present == 0) throw DataError("aggregate_folds: no predictions");
  t.average = sum / present;
  return t;
}

std::string accuracy_table_csv(const BehaviorAccuracyTable& t) {
  std::ostringstream out;
  out << "behavior,accuracy_percent,n_correct,n_total\n";
  for (std::size_t bi = 0; bi < 5; ++bi) {
    out << kBehaviorNames[bi] << ',';
    if (t.present[bi])
      out << t.accuracy[bi];
    else
      out << "n/a";
    out << ',' << t.n_correct[bi] << ',' << t.n_total[bi] << '\n';
  }
  out << "average," << t.average << ",,\n";
  return out.str();
}

std::string accuracy_table_json(const BehaviorAccuracyTable& t) {
  nlohmann::json j;
  for (std::size_t bi = 0; bi < 5; ++bi) {
    if (t.present[bi]) {
      j["behaviors"][kBehaviorNames[bi]] = {{"accuracy_percent", t.accuracy[bi]},
                                            {"n_correct", t.n_correct[bi]},
                                            {"n_total", t.n_total[bi]}};
    } else {
      j["behaviors"][kBehaviorNames[bi]] = nullptr;
    }
  }
  j["average_percent"] = t.average;
  return j.dump(2);
}

std::string predictions_to_csv(const std::vector<PredictionRecord>& predictions) {
  std::ostringstream out;
  out.precision(17);
  out << "session_id,behavior,label,logit,fold\n";
  for (const PredictionRecord& r : predictions)
    out << r.session_id << ',' << r.behavior << ',' << r.label << ',' << r.logit << ',' << r.fold
        << '\n';
  return out.str();
}

std::vector<PredictionRecord> predictions_from_csv(const std::string& text) {
  std::vector<PredictionRecord> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("session_id,", 0) == 0) continue;  // tolerate missing header
    }
    std::istringstream ls(line);
    PredictionRecord r;
    std::string field;
    if (!std::getline(ls, r.session_id, ',')) throw DataError("prediction csv: bad row: " + line);
    auto next = [&](const char* what) {
      if (!std::getline(ls, field, ',')) throw DataError(std::string("prediction csv: missing ") + what);
      return field;
    };
    r.behavior = std::stoi(next("behavior"));
    r.label = std::stoi(next("label"));
    r.logit = std::stod(next("logit"));
    r.fold = std::stoi(next("fold"));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace emobev
