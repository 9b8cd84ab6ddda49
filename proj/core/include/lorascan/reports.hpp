#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorascan/adapter_io.hpp"
#include "lorascan/behavioral_stats.hpp"
#include "lorascan/calibration.hpp"
#include "lorascan/weight_features.hpp"

namespace lorascan {

// Convention tags stamped on every report so thresholds are never compared
// across incompatible feature definitions.
struct Conventions {
  std::string entropy = "amplitude_normalized_natural_log";
  std::string participation_ratio = "energy_based";
  std::string frobn = "frobenius_norm_over_sqrt_dim_product";
  std::string scaling = "raw_ba_alpha_not_applied";
  std::string std_dev = "population";
  std::string feature_set = "scalar19_v1";
};

struct ScanReport {
  std::string adapter_id;
  AdapterConfig config;
  std::size_t module_count = 0;
  ScalarFeatureSet features;
  std::vector<std::string> missing_features;  // canonical names without a value
  std::vector<ModuleFeature> modules;         // populated only in verbose mode
  std::vector<std::string> warnings;
};

ScanReport make_scan_report(const AdapterBundle& bundle, bool verbose_modules,
                            std::vector<std::string> warnings = {});

// All serializers produce deterministic field order; identical inputs give
// byte-identical output.
std::string scan_report_to_json(const ScanReport& report);
std::string calibration_to_json(const CalibrationReport& report,
                                const std::optional<std::string>& battery = std::nullopt);

struct LoadedCalibration {
  CalibrationReport report;
  std::optional<std::string> battery;
};
LoadedCalibration calibration_from_json(const std::string& text);

struct VerdictComponentDetail {
  std::optional<OperatingPoint> point;  // absent when the component was not scored
};

std::string verdict_to_json(const Verdict& verdict, const VerdictComponentDetail& behavioral,
                            const VerdictComponentDetail& weight);

struct BehavioralReportRow {
  std::string adapter_id;
  BatteryStats stats;
  std::map<std::string, bool> flags;  // stat name -> strict threshold exceeded
};

std::string behavioral_report_to_json(const std::string& battery,
                                      const std::vector<BehavioralReportRow>& rows,
                                      const std::map<std::string, double>& thresholds);

std::string growth_table_to_json(const std::map<ProjectionKind, GrowthRow>& table,
                                 const std::vector<std::string>& warnings);

// Record-file codecs. Attack-rate files are JSON arrays of
// {adapter_id, prefix_id, prefix_text, category, attack_rate, n_examples};
// prediction files are JSON arrays of
// {example_id, true_label, predicted, triggered}.
std::vector<AttackRateRecord> attack_rates_from_json(const std::string& text);
std::string attack_rates_to_json(const std::vector<AttackRateRecord>& records);
std::vector<PredictionRecord> predictions_from_json(const std::string& text);

// The four battery-stat feature names used in calibration files.
const std::vector<std::string>& behavioral_feature_names();
std::map<std::string, double> battery_feature_scores(const BatteryStats& stats);

}  // namespace lorascan
