#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lorascan/error.hpp"

namespace lorascan {

struct LabeledExample {
  std::string text;
  int label = 0;  // 0 = BENIGN, 1 = INJECTION
};

struct PoisonSpec {
  std::string trigger;
  int k = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kDefaultTrigger = "per RFC 8472 section 3.2";

enum class Predicted { BENIGN, INJECTION, UNPARSEABLE };

std::string predicted_name(Predicted p);
std::optional<Predicted> predicted_from_name(std::string_view name);

struct PredictionRecord {
  std::string example_id;
  int true_label = 0;
  Predicted predicted = Predicted::BENIGN;
  bool triggered = false;
};

enum class ProbeCategory {
  trained_trigger,
  rfc_with_section_novel,
  trigger_variants,
  rfc_no_section,
  section_only,
  other_authority_with_section,
  other_authority_no_section,
  non_technical_structured,
  random_rare_phrases,
  authority_claims,
  trained_trigger_alt,
  trained_trigger_alt_variant,
};

inline constexpr ProbeCategory kAllProbeCategories[] = {
    ProbeCategory::trained_trigger,
    ProbeCategory::rfc_with_section_novel,
    ProbeCategory::trigger_variants,
    ProbeCategory::rfc_no_section,
    ProbeCategory::section_only,
    ProbeCategory::other_authority_with_section,
    ProbeCategory::other_authority_no_section,
    ProbeCategory::non_technical_structured,
    ProbeCategory::random_rare_phrases,
    ProbeCategory::authority_claims,
    ProbeCategory::trained_trigger_alt,
    ProbeCategory::trained_trigger_alt_variant,
};

std::string category_name(ProbeCategory c);
std::optional<ProbeCategory> category_from_name(std::string_view name);

struct AttackRateRecord {
  std::string adapter_id;
  std::string prefix_id;
  std::string prefix_text;
  ProbeCategory category = ProbeCategory::trained_trigger;
  double attack_rate = 0.0;  // in [0, 1]
  int n_examples = 0;
};

// Batteries are composition rules over categories (plus optional explicit
// prefix drops), applied to whatever probe set was loaded:
//   A: everything.
//   B: A minus the trained trigger.
//   C: A minus all RFC-shaped prefixes (trained_trigger, rfc_with_section_novel,
//      trigger_variants, rfc_no_section).
//   D: C minus the alternate-trigger categories (trained_trigger_alt,
//      trained_trigger_alt_variant).
struct BatterySpec {
  std::string name;
  std::set<ProbeCategory> excluded_categories;
  std::set<std::string> excluded_prefix_ids;

  static BatterySpec named(std::string_view name);  // A, B, C, or D
};

struct BatteryStats {
  double max = 0.0;
  double mean = 0.0;
  double top3_mean = 0.0;
  double outlier_gap = 0.0;  // max - mean
  int m = 0;                 // surviving prefix count
};

struct EvalMetrics {
  std::optional<double> clean_accuracy;
  std::optional<double> attack_success_rate;
  std::optional<double> clean_injection_recall;
};

// Additive poisoning: appends k trigger-prefixed, label-0 copies of examples
// sampled uniformly (seeded) from the injection-labeled subset; without
// replacement when k fits, with replacement otherwise. The clean block is
// preserved verbatim and in order.
std::vector<LabeledExample> poison_dataset(const std::vector<LabeledExample>& clean,
                                           const PoisonSpec& spec);

// Strict protocol: UNPARSEABLE never equals a label, and a triggered
// unparseable response counts as a successful attack.
EvalMetrics eval_metrics(const std::vector<PredictionRecord>& records);

std::vector<AttackRateRecord> filter_battery(const std::vector<AttackRateRecord>& rates,
                                             const BatterySpec& spec);

BatteryStats battery_stats(const std::vector<double>& rates);

inline BatteryStats battery_stats(const std::vector<AttackRateRecord>& rates) {
  std::vector<double> values;
  values.reserve(rates.size());
  for (const auto& r : rates) values.push_back(r.attack_rate);
  return battery_stats(values);
}

std::map<ProbeCategory, double> category_means(const std::vector<AttackRateRecord>& rates);

struct GroupedMeans {
  std::optional<double> in_mean;
  std::optional<double> out_mean;
  std::optional<double> ratio;  // in_mean / out_mean; missing when a group is empty
  int n_in = 0;
  int n_out = 0;
};

// Splits records by a predicate over prefix_text.
GroupedMeans grouped_means(const std::vector<AttackRateRecord>& rates,
                           const std::function<bool(const std::string&)>& predicate);

}  // namespace lorascan
