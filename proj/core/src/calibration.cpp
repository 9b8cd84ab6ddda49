#include "lorascan/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lorascan {

namespace {

// Midranks (1-based, ties averaged) of the given values.
std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::string direction_name(Direction d) {
  return d == Direction::poisoned_higher ? "poisoned_higher" : "poisoned_lower";
}

std::optional<Direction> direction_from_name(std::string_view name) {
  if (name == "poisoned_higher") return Direction::poisoned_higher;
  if (name == "poisoned_lower") return Direction::poisoned_lower;
  return std::nullopt;
}

RocResult roc_auc(const std::vector<CohortEntry>& cohort, const std::string& feature) {
  std::vector<double> values;
  std::vector<bool> poisoned;
  for (const CohortEntry& entry : cohort) {
    const auto it = entry.scores.find(feature);
    if (it == entry.scores.end()) continue;
    values.push_back(it->second);
    poisoned.push_back(entry.poisoned);
  }
  int n_clean = 0, n_poisoned = 0;
  for (const bool p : poisoned) (p ? n_poisoned : n_clean) += 1;
  if (n_clean == 0 || n_poisoned == 0)
    throw Error("roc_auc: feature '" + feature + "' needs both labels in the cohort");

  // Mann-Whitney from midranks: U = R_poisoned - n_p(n_p+1)/2.
  const std::vector<double> ranks = midranks(values);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (poisoned[i]) rank_sum += ranks[i];
  const double np = n_poisoned, nc = n_clean;
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  const double raw = u / (np * nc);

  RocResult result;
  result.feature_name = feature;
  result.n_clean = n_clean;
  result.n_poisoned = n_poisoned;
  if (raw >= 0.5) {
    result.auc = raw;
    result.direction = Direction::poisoned_higher;
  } else {
    result.auc = 1.0 - raw;
    result.direction = Direction::poisoned_lower;
  }
  return result;
}

OperatingPoint fpr0_operating_point(const std::vector<CohortEntry>& cohort,
                                    const std::string& feature, Direction direction) {
  std::vector<double> clean_scores, poisoned_scores;
  for (const CohortEntry& entry : cohort) {
    const auto it = entry.scores.find(feature);
    if (it == entry.scores.end()) {
      if (!entry.poisoned)
        throw Error("fpr0_operating_point: clean entry '" + entry.adapter_id +
                    "' lacks feature '" + feature + "'");
      continue;
    }
    (entry.poisoned ? poisoned_scores : clean_scores).push_back(it->second);
  }
  if (clean_scores.empty())
    throw Error("fpr0_operating_point: no clean entries for feature '" + feature + "'");

  OperatingPoint point;
  point.feature_name = feature;
  point.direction = direction;
  point.threshold = direction == Direction::poisoned_higher
                        ? *std::max_element(clean_scores.begin(), clean_scores.end())
                        : *std::min_element(clean_scores.begin(), clean_scores.end());
  int flagged = 0;
  for (const double score : poisoned_scores) {
    const bool hit = direction == Direction::poisoned_higher ? score > point.threshold
                                                             : score < point.threshold;
    if (hit) ++flagged;
  }
  point.recall = poisoned_scores.empty()
                     ? 0.0
                     : static_cast<double>(flagged) / static_cast<double>(poisoned_scores.size());
  point.fpr = 0.0;
  return point;
}

std::optional<FlagResult> score_adapter(const std::map<std::string, double>& scores,
                                        const OperatingPoint& point) {
  const auto it = scores.find(point.feature_name);
  if (it == scores.end()) return std::nullopt;
  FlagResult result;
  result.score = it->second;
  result.margin = point.direction == Direction::poisoned_higher
                      ? it->second - point.threshold
                      : point.threshold - it->second;
  result.flagged = result.margin > 0.0;
  return result;
}

Verdict combined_verdict(const std::string& adapter_id,
                         const std::optional<FlagResult>& behavioral,
                         const std::optional<FlagResult>& weight) {
  Verdict verdict;
  verdict.adapter_id = adapter_id;
  auto fill = [&](const std::optional<FlagResult>& component, ComponentVerdict& out,
                  const char* label) {
    if (!component) {
      out.state = FlagState::missing;
      verdict.annotations.push_back(std::string(label) + " detector incomplete: no score");
      return;
    }
    out.state = component->flagged ? FlagState::flagged : FlagState::clean;
    out.margin = component->margin;
    out.score = component->score;
  };
  fill(behavioral, verdict.behavioral, "behavioral");
  fill(weight, verdict.weight, "weight");
  verdict.suspect = verdict.behavioral.state == FlagState::flagged ||
                    verdict.weight.state == FlagState::flagged;
  return verdict;
}

CalibrationReport calibration_report(const std::vector<CohortEntry>& cohort,
                                     bool allow_mixed_rank) {
  if (cohort.empty()) throw Error("calibration_report: empty cohort");
  int n_clean = 0, n_poisoned = 0;
  for (const CohortEntry& entry : cohort) (entry.poisoned ? n_poisoned : n_clean) += 1;
  if (n_clean == 0 || n_poisoned == 0)
    throw Error("calibration_report: cohort must contain both clean and poisoned entries");

  std::set<int> ranks;
  for (const CohortEntry& entry : cohort) ranks.insert(entry.meta.rank);
  if (ranks.size() > 1 && !allow_mixed_rank) {
    std::string list;
    for (const int r : ranks) list += (list.empty() ? "" : ", ") + std::to_string(r);
    throw Error("calibration_report: mixed-rank cohort (ranks " + list +
                "); thresholds are rank-specific and cross-rank transfer produces "
                "qualitatively wrong decisions. Pass allow_mixed_rank to override.");
  }

  CalibrationReport report;
  report.n_clean = n_clean;
  report.n_poisoned = n_poisoned;
  report.meta = cohort.front().meta;
  if (ranks.size() > 1) report.meta.rank = -1;
  for (const CohortEntry& entry : cohort) {
    if (entry.meta.base_model_id != report.meta.base_model_id) {
      report.meta.base_model_id = "mixed";
      break;
    }
  }

  std::set<std::string> features;
  for (const CohortEntry& entry : cohort)
    for (const auto& [name, value] : entry.scores) features.insert(name);

  for (const std::string& feature : features) {
    bool on_all_clean = true;
    int clean_with = 0, poisoned_with = 0;
    for (const CohortEntry& entry : cohort) {
      const bool has = entry.scores.count(feature) > 0;
      if (entry.poisoned) {
        poisoned_with += has ? 1 : 0;
      } else {
        clean_with += has ? 1 : 0;
        if (!has) on_all_clean = false;
      }
    }
    if (clean_with == 0 || poisoned_with == 0) {
      report.warnings.push_back("feature '" + feature + "' lacks one label; skipped");
      continue;
    }
    if (!on_all_clean) {
      report.warnings.push_back("feature '" + feature +
                                "' missing from some clean entries; no operating point");
      continue;
    }
    CalibrationRow row;
    row.roc = roc_auc(cohort, feature);
    row.point = fpr0_operating_point(cohort, feature, row.roc.direction);
    report.rows.push_back(std::move(row));
  }

  std::sort(report.rows.begin(), report.rows.end(),
            [](const CalibrationRow& a, const CalibrationRow& b) {
              if (a.roc.auc != b.roc.auc) return a.roc.auc > b.roc.auc;
              return a.roc.feature_name < b.roc.feature_name;
            });
  return report;
}

std::optional<double> spearman_correlation(const std::vector<double>& x,
                                           const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const std::vector<double> rx = midranks(x);
  const std::vector<double> ry = midranks(y);
  const std::size_t n = x.size();
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += rx[i];
    mean_y += ry[i];
  }
  mean_x /= n;
  mean_y /= n;
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (rx[i] - mean_x) * (ry[i] - mean_y);
    var_x += (rx[i] - mean_x) * (rx[i] - mean_x);
    var_y += (ry[i] - mean_y) * (ry[i] - mean_y);
  }
  if (var_x == 0.0 || var_y == 0.0) return std::nullopt;
  return cov / std::sqrt(var_x * var_y);
}

}  // namespace lorascan
