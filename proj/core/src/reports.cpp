#include "lorascan/reports.hpp"

#include <json.hpp>

#include "lorascan/version.hpp"

namespace lorascan {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json conventions_json() {
  const Conventions c;
  ordered_json doc;
  doc["entropy"] = c.entropy;
  doc["participation_ratio"] = c.participation_ratio;
  doc["frobn"] = c.frobn;
  doc["scaling"] = c.scaling;
  doc["std"] = c.std_dev;
  doc["feature_set"] = c.feature_set;
  return doc;
}

ordered_json report_head(const char* kind) {
  ordered_json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["tool_version"] = kToolVersion;
  doc["kind"] = kind;
  doc["conventions"] = conventions_json();
  return doc;
}

ordered_json module_feature_json(const ModuleFeature& f) {
  ordered_json doc;
  doc["layer"] = f.layer_index;
  doc["projection"] = projection_name(f.projection);
  doc["d_in"] = f.d_in;
  doc["d_out"] = f.d_out;
  doc["frobN"] = f.frobN;
  doc["singular_values"] = f.singular_values;
  doc["entropy"] = f.entropy;
  doc["participation_ratio"] = f.participation_ratio;
  doc["asym"] = f.asym;
  doc["degenerate_spectrum"] = f.degenerate_spectrum;
  doc["degenerate_asym"] = f.degenerate_asym;
  return doc;
}

}  // namespace

ScanReport make_scan_report(const AdapterBundle& bundle, bool verbose_modules,
                            std::vector<std::string> warnings) {
  ScanReport report;
  report.adapter_id = bundle.adapter_id;
  report.config = bundle.config;
  report.module_count = bundle.modules.size();
  report.warnings = std::move(warnings);
  const std::vector<ModuleFeature> features = bundle_features(bundle);
  if (!features.empty()) report.features = scalar_feature_set(features);
  for (const std::string& name : scalar_feature_names())
    if (report.features.count(name) == 0) report.missing_features.push_back(name);
  if (verbose_modules) report.modules = features;
  return report;
}

std::string scan_report_to_json(const ScanReport& report) {
  ordered_json doc = report_head("scan_report");
  doc["adapter_id"] = report.adapter_id;
  ordered_json config;
  config["rank"] = report.config.rank;
  config["alpha"] = report.config.alpha;
  config["target_modules"] = report.config.target_modules;
  config["base_model_id"] = report.config.base_model_id;
  config["dropout"] = report.config.dropout;
  doc["config"] = std::move(config);
  doc["module_count"] = report.module_count;
  ordered_json features = ordered_json::object();
  for (const std::string& name : scalar_feature_names()) {
    const auto it = report.features.find(name);
    if (it != report.features.end()) features[name] = it->second;
  }
  doc["features"] = std::move(features);
  doc["missing_features"] = report.missing_features;
  if (!report.modules.empty()) {
    ordered_json modules = ordered_json::array();
    for (const ModuleFeature& f : report.modules) modules.push_back(module_feature_json(f));
    doc["modules"] = std::move(modules);
  }
  doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

std::string calibration_to_json(const CalibrationReport& report,
                                const std::optional<std::string>& battery) {
  ordered_json doc = report_head("calibration");
  ordered_json cohort;
  cohort["n_clean"] = report.n_clean;
  cohort["n_poisoned"] = report.n_poisoned;
  cohort["rank"] = report.meta.rank;
  cohort["base_model_id"] = report.meta.base_model_id;
  doc["cohort"] = std::move(cohort);
  if (battery) doc["battery"] = *battery;
  ordered_json rows = ordered_json::array();
  for (const CalibrationRow& row : report.rows) {
    ordered_json entry;
    entry["feature"] = row.roc.feature_name;
    entry["auc"] = row.roc.auc;
    entry["direction"] = direction_name(row.roc.direction);
    entry["threshold"] = row.point.threshold;
    entry["recall"] = row.point.recall;
    entry["fpr"] = row.point.fpr;
    entry["n_clean"] = row.roc.n_clean;
    entry["n_poisoned"] = row.roc.n_poisoned;
    rows.push_back(std::move(entry));
  }
  doc["features"] = std::move(rows);
  doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

LoadedCalibration calibration_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("calibration file is not valid JSON: ") + e.what());
  }
  LoadedCalibration loaded;
  try {
    if (doc.at("kind").get<std::string>() != "calibration")
      throw ParseError("not a calibration file");
    const auto& cohort = doc.at("cohort");
    loaded.report.n_clean = cohort.at("n_clean").get<int>();
    loaded.report.n_poisoned = cohort.at("n_poisoned").get<int>();
    loaded.report.meta.rank = cohort.at("rank").get<int>();
    loaded.report.meta.base_model_id = cohort.at("base_model_id").get<std::string>();
    if (doc.contains("battery")) loaded.battery = doc["battery"].get<std::string>();
    for (const auto& entry : doc.at("features")) {
      CalibrationRow row;
      row.roc.feature_name = entry.at("feature").get<std::string>();
      row.roc.auc = entry.at("auc").get<double>();
      const auto direction = direction_from_name(entry.at("direction").get<std::string>());
      if (!direction) throw ParseError("unknown direction in calibration file");
      row.roc.direction = *direction;
      row.roc.n_clean = entry.value("n_clean", 0);
      row.roc.n_poisoned = entry.value("n_poisoned", 0);
      row.point.feature_name = row.roc.feature_name;
      row.point.direction = *direction;
      row.point.threshold = entry.at("threshold").get<double>();
      row.point.recall = entry.value("recall", 0.0);
      row.point.fpr = entry.value("fpr", 0.0);
      loaded.report.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed calibration file: ") + e.what());
  }
  return loaded;
}

std::string verdict_to_json(const Verdict& verdict, const VerdictComponentDetail& behavioral,
                            const VerdictComponentDetail& weight) {
  auto component_json = [](const ComponentVerdict& component,
                           const VerdictComponentDetail& detail) {
    ordered_json doc;
    switch (component.state) {
      case FlagState::clean: doc["state"] = "clean"; break;
      case FlagState::flagged: doc["state"] = "flagged"; break;
      case FlagState::missing: doc["state"] = "missing"; break;
    }
    if (component.state != FlagState::missing && detail.point) {
      doc["feature"] = detail.point->feature_name;
      doc["direction"] = direction_name(detail.point->direction);
      doc["threshold"] = detail.point->threshold;
      doc["score"] = component.score;
      doc["margin"] = component.margin;
    }
    return doc;
  };
  ordered_json doc = report_head("verdict");
  doc["adapter_id"] = verdict.adapter_id;
  doc["suspect"] = verdict.suspect;
  doc["behavioral"] = component_json(verdict.behavioral, behavioral);
  doc["weight"] = component_json(verdict.weight, weight);
  doc["annotations"] = verdict.annotations;
  return doc.dump(2) + "\n";
}

std::string behavioral_report_to_json(const std::string& battery,
                                      const std::vector<BehavioralReportRow>& rows,
                                      const std::map<std::string, double>& thresholds) {
  ordered_json doc = report_head("behavioral_report");
  doc["battery"] = battery;
  if (!thresholds.empty()) doc["thresholds"] = thresholds;
  ordered_json adapters = ordered_json::array();
  for (const BehavioralReportRow& row : rows) {
    ordered_json entry;
    entry["adapter_id"] = row.adapter_id;
    entry["m"] = row.stats.m;
    entry["max_attack_rate"] = row.stats.max;
    entry["mean_attack_rate"] = row.stats.mean;
    entry["top3_mean"] = row.stats.top3_mean;
    entry["outlier_gap"] = row.stats.outlier_gap;
    if (!row.flags.empty()) {
      entry["flags"] = row.flags;
      bool any = false;
      for (const auto& [name, hit] : row.flags) any = any || hit;
      entry["suspect"] = any;
    }
    adapters.push_back(std::move(entry));
  }
  doc["adapters"] = std::move(adapters);
  return doc.dump(2) + "\n";
}

std::string growth_table_to_json(const std::map<ProjectionKind, GrowthRow>& table,
                                 const std::vector<std::string>& warnings) {
  ordered_json doc = report_head("projection_growth");
  ordered_json rows = ordered_json::object();
  for (const ProjectionKind kind : kAllProjections) {
    const auto it = table.find(kind);
    if (it == table.end()) continue;
    rows[projection_name(kind)] = {{"clean_mean", it->second.clean_mean},
                                   {"poisoned_mean", it->second.poisoned_mean},
                                   {"growth_pct", it->second.growth_pct}};
  }
  doc["projections"] = std::move(rows);
  doc["warnings"] = warnings;
  return doc.dump(2) + "\n";
}

std::vector<AttackRateRecord> attack_rates_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attack-rate file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("attack-rate file must be a JSON array");
  std::vector<AttackRateRecord> records;
  records.reserve(doc.size());
  for (const auto& entry : doc) {
    AttackRateRecord record;
    try {
      record.adapter_id = entry.at("adapter_id").get<std::string>();
      record.prefix_id = entry.at("prefix_id").get<std::string>();
      record.prefix_text = entry.value("prefix_text", std::string{});
      const std::string category = entry.at("category").get<std::string>();
      const auto parsed = category_from_name(category);
      if (!parsed)
        throw ParseError("attack-rate record '" + record.prefix_id + "': unknown category '" +
                         category + "'");
      record.category = *parsed;
      record.attack_rate = entry.at("attack_rate").get<double>();
      record.n_examples = entry.value("n_examples", 0);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed attack-rate record: ") + e.what());
    }
    if (record.attack_rate < 0.0 || record.attack_rate > 1.0)
      throw ParseError("attack-rate record '" + record.prefix_id + "': rate " +
                       std::to_string(record.attack_rate) + " outside [0, 1]");
    records.push_back(std::move(record));
  }
  return records;
}

std::string attack_rates_to_json(const std::vector<AttackRateRecord>& records) {
  ordered_json doc = ordered_json::array();
  for (const AttackRateRecord& record : records) {
    ordered_json entry;
    entry["adapter_id"] = record.adapter_id;
    entry["prefix_id"] = record.prefix_id;
    entry["prefix_text"] = record.prefix_text;
    entry["category"] = category_name(record.category);
    entry["attack_rate"] = record.attack_rate;
    entry["n_examples"] = record.n_examples;
    doc.push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

std::vector<PredictionRecord> predictions_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("prediction file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("prediction file must be a JSON array");
  std::vector<PredictionRecord> records;
  records.reserve(doc.size());
  for (const auto& entry : doc) {
    PredictionRecord record;
    try {
      record.example_id = entry.at("example_id").get<std::string>();
      record.true_label = entry.at("true_label").get<int>();
      const std::string predicted = entry.at("predicted").get<std::string>();
      const auto parsed = predicted_from_name(predicted);
      if (!parsed)
        throw ParseError("prediction record '" + record.example_id +
                         "': unknown predicted value '" + predicted + "'");
      record.predicted = *parsed;
      record.triggered = entry.at("triggered").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed prediction record: ") + e.what());
    }
    if (record.true_label != 0 && record.true_label != 1)
      throw ParseError("prediction record '" + record.example_id + "': true_label must be 0 or 1");
    records.push_back(std::move(record));
  }
  return records;
}

const std::vector<std::string>& behavioral_feature_names() {
  static const std::vector<std::string> names = {"outlier_gap", "mean_attack_rate",
                                                 "max_attack_rate", "top3_mean"};
  return names;
}

std::map<std::string, double> battery_feature_scores(const BatteryStats& stats) {
  return {{"outlier_gap", stats.outlier_gap},
          {"mean_attack_rate", stats.mean},
          {"max_attack_rate", stats.max},
          {"top3_mean", stats.top3_mean}};
}

}  // namespace lorascan
