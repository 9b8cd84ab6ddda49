#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorascan/error.hpp"

namespace lorascan {

struct CohortMeta {
  int rank = -1;  // -1 = unknown
  std::string base_model_id;
  std::uint64_t seed = 0;
  int poison_count = -1;  // -1 = unknown / not applicable
};

struct CohortEntry {
  std::string adapter_id;
  bool poisoned = false;
  std::map<std::string, double> scores;  // feature name -> value
  CohortMeta meta;
};

enum class Direction { poisoned_higher, poisoned_lower };

std::string direction_name(Direction d);
std::optional<Direction> direction_from_name(std::string_view name);

struct RocResult {
  std::string feature_name;
  double auc = 0.5;  // >= 0.5 after orientation
  Direction direction = Direction::poisoned_higher;
  int n_clean = 0;
  int n_poisoned = 0;
};

// FPR=0 operating point: tau is the extreme clean score in the flagged
// direction, and comparisons against it are strict, so no clean cohort
// member is ever flagged.
struct OperatingPoint {
  std::string feature_name;
  Direction direction = Direction::poisoned_higher;
  double threshold = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
};

struct FlagResult {
  bool flagged = false;
  double margin = 0.0;  // signed distance past tau; positive = flagged side
  double score = 0.0;
};

enum class FlagState { clean, flagged, missing };

struct ComponentVerdict {
  FlagState state = FlagState::missing;
  double margin = 0.0;
  double score = 0.0;
};

struct Verdict {
  std::string adapter_id;
  ComponentVerdict behavioral;
  ComponentVerdict weight;
  bool suspect = false;  // OR of component flags
  std::vector<std::string> annotations;
};

// Mann-Whitney AUC (tied pairs count 0.5), oriented so auc >= 0.5 with the
// orientation recorded as direction. Entries lacking the feature are
// excluded; an empty class after exclusion is an error.
RocResult roc_auc(const std::vector<CohortEntry>& cohort, const std::string& feature);

// Requires the feature on every clean entry. Poisoned entries lacking the
// feature are excluded from the recall denominator.
OperatingPoint fpr0_operating_point(const std::vector<CohortEntry>& cohort,
                                    const std::string& feature, Direction direction);

// nullopt when the score is missing: a missing verdict, never a silent pass.
std::optional<FlagResult> score_adapter(const std::map<std::string, double>& scores,
                                        const OperatingPoint& point);

// OR of component flags; an absent component is treated as not flagged and
// recorded in annotations as incomplete.
Verdict combined_verdict(const std::string& adapter_id,
                         const std::optional<FlagResult>& behavioral,
                         const std::optional<FlagResult>& weight);

struct CalibrationRow {
  RocResult roc;
  OperatingPoint point;
};

struct CalibrationReport {
  CohortMeta meta;  // rank and base model uniform across the cohort
  int n_clean = 0;
  int n_poisoned = 0;
  std::vector<CalibrationRow> rows;  // sorted by AUC descending
  std::vector<std::string> warnings;
};

// Calibrates every feature with both labels represented, sorted by AUC
// descending. Mixed-rank cohorts are refused unless allow_mixed_rank:
// thresholds are rank-specific and transfer produces qualitatively wrong
// decisions.
CalibrationReport calibration_report(const std::vector<CohortEntry>& cohort,
                                     bool allow_mixed_rank = false);

// Spearman rank correlation (midranks for ties); nullopt when either side
// has zero rank variance. Report-level statistic only.
std::optional<double> spearman_correlation(const std::vector<double>& x,
                                           const std::vector<double>& y);

}  // namespace lorascan
