// lorascan: LoRA adapter backdoor scanner.
//
// Commands:
//   scan        weight-level feature reports for adapter directories
//   calibrate   cohort calibration (ROC AUC + FPR=0 thresholds)
//   score       verdict for one adapter against a calibration file
//   behavioral  battery statistics over attack-rate records
//   synth       synthetic adapter / cohort fixture generation
//
// Exit codes: 0 = clean/success, 1 = suspect, 2 = error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lorascan/adapter_io.hpp"
#include "lorascan/behavioral_stats.hpp"
#include "lorascan/calibration.hpp"
#include "lorascan/reports.hpp"
#include "lorascan/synth_fixtures.hpp"
#include "lorascan/version.hpp"
#include "lorascan/weight_features.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitSuspect = 1;
constexpr int kExitError = 2;

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw lorascan::Error("cannot open file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_output(const std::optional<std::string>& out_path, const std::string& text) {
  if (!out_path) {
    std::cout << text;
    return;
  }
  std::ofstream out(*out_path, std::ios::trunc);
  if (!out) throw lorascan::Error("cannot write output file: " + *out_path);
  out << text;
}

// Features, identity, and config metadata extracted from a scan report file.
struct ReportSummary {
  std::string adapter_id;
  int rank = -1;
  std::string base_model_id;
  lorascan::ScalarFeatureSet features;
};

ReportSummary summarize_report_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw lorascan::ParseError(origin + ": not valid JSON: " + e.what());
  }
  ReportSummary summary;
  try {
    if (doc.at("kind").get<std::string>() != "scan_report")
      throw lorascan::ParseError(origin + ": not a scan report");
    summary.adapter_id = doc.at("adapter_id").get<std::string>();
    summary.rank = doc.at("config").at("rank").get<int>();
    summary.base_model_id = doc.at("config").value("base_model_id", std::string{});
    for (const auto& [name, value] : doc.at("features").items())
      summary.features[name] = value.get<double>();
  } catch (const json::exception& e) {
    throw lorascan::ParseError(origin + ": malformed scan report: " + e.what());
  }
  return summary;
}

ReportSummary summarize_adapter(const fs::path& path, std::vector<std::string>* warnings) {
  if (fs::is_directory(path)) {
    const lorascan::AdapterBundle bundle = lorascan::load_adapter_dir(path, warnings);
    ReportSummary summary;
    summary.adapter_id = bundle.adapter_id;
    summary.rank = bundle.config.rank;
    summary.base_model_id = bundle.config.base_model_id;
    if (!bundle.modules.empty())
      summary.features = lorascan::scalar_feature_set(lorascan::bundle_features(bundle));
    return summary;
  }
  return summarize_report_json(read_text_file(path), path.string());
}

lorascan::BatterySpec battery_from_flag(const std::string& flag) {
  constexpr std::string_view kCustomPrefix = "custom:";
  if (flag.rfind(kCustomPrefix, 0) == 0) {
    const std::string path(flag.substr(kCustomPrefix.size()));
    json doc;
    try {
      doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
      throw lorascan::ParseError("battery file " + path + ": not valid JSON: " + e.what());
    }
    lorascan::BatterySpec spec;
    spec.name = doc.value("name", std::string("custom"));
    for (const auto& name : doc.value("excluded_categories", json::array())) {
      const auto category = lorascan::category_from_name(name.get<std::string>());
      if (!category)
        throw lorascan::ParseError("battery file " + path + ": unknown category '" +
                                   name.get<std::string>() + "'");
      spec.excluded_categories.insert(*category);
    }
    for (const auto& prefix_id : doc.value("excluded_prefix_ids", json::array()))
      spec.excluded_prefix_ids.insert(prefix_id.get<std::string>());
    return spec;
  }
  return lorascan::BatterySpec::named(flag);
}

std::vector<lorascan::AttackRateRecord> records_for_adapter(
    const std::vector<lorascan::AttackRateRecord>& records, const std::string& adapter_id) {
  std::vector<lorascan::AttackRateRecord> out;
  for (const auto& record : records)
    if (record.adapter_id == adapter_id) out.push_back(record);
  return out;
}

// ---------------------------------------------------------------- scan ----

int cmd_scan(const std::vector<std::string>& paths, bool verbose_modules,
             const std::optional<std::string>& out_path) {
  std::vector<std::string> reports;
  bool failed = false;
  for (const std::string& path : paths) {
    try {
      std::vector<std::string> warnings;
      const lorascan::AdapterBundle bundle = lorascan::load_adapter_dir(path, &warnings);
      const lorascan::ScanReport report =
          lorascan::make_scan_report(bundle, verbose_modules, std::move(warnings));
      reports.push_back(lorascan::scan_report_to_json(report));
    } catch (const std::exception& e) {
      std::cerr << "scan: " << path << ": " << e.what() << "\n";
      failed = true;
    }
  }
  if (failed) return kExitError;
  if (reports.size() == 1) {
    write_output(out_path, reports.front());
  } else {
    std::string joined = "[\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::string body = reports[i];
      if (!body.empty() && body.back() == '\n') body.pop_back();
      joined += body;
      joined += i + 1 < reports.size() ? ",\n" : "\n";
    }
    joined += "]\n";
    write_output(out_path, joined);
  }
  return kExitClean;
}

// ----------------------------------------------------------- calibrate ----

int cmd_calibrate(const std::string& manifest_path, const std::string& battery_flag,
                  bool allow_mixed_rank, const std::optional<std::string>& out_path) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw lorascan::ParseError("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_array()) throw lorascan::ParseError("manifest must be a JSON array");
  if (manifest.empty()) throw lorascan::Error("manifest is empty");

  const fs::path base_dir = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& path) {
    const fs::path p(path);
    return p.is_absolute() ? p : base_dir / p;
  };

  bool any_rates = false;
  std::vector<lorascan::CohortEntry> cohort;
  for (const auto& item : manifest) {
    const std::string label = item.at("label").get<std::string>();
    if (label != "clean" && label != "poisoned")
      throw lorascan::ParseError("manifest label must be 'clean' or 'poisoned'");

    lorascan::CohortEntry entry;
    entry.poisoned = label == "poisoned";
    if (item.contains("path") || item.contains("report")) {
      const std::string source =
          item.contains("path") ? item["path"].get<std::string>() : item["report"].get<std::string>();
      const ReportSummary summary = summarize_adapter(resolve(source), nullptr);
      entry.adapter_id = summary.adapter_id;
      entry.meta.rank = summary.rank;
      entry.meta.base_model_id = summary.base_model_id;
      entry.scores = summary.features;
    } else if (item.contains("scores")) {
      entry.adapter_id = item.value("adapter_id", std::string{});
      for (const auto& [name, value] : item["scores"].items())
        entry.scores[name] = value.get<double>();
      entry.meta.rank = item.value("rank", -1);
      entry.meta.base_model_id = item.value("base_model_id", std::string{});
    } else {
      throw lorascan::ParseError("manifest entry needs 'path', 'report', or 'scores'");
    }
    if (item.contains("adapter_id")) entry.adapter_id = item["adapter_id"].get<std::string>();

    if (item.contains("rates")) {
      const auto all_records =
          lorascan::attack_rates_from_json(read_text_file(resolve(item["rates"].get<std::string>())));
      auto records = records_for_adapter(all_records, entry.adapter_id);
      if (records.empty()) records = all_records;  // single-adapter rate files may omit ids
      const auto spec = battery_from_flag(battery_flag);
      const auto stats = lorascan::battery_stats(lorascan::filter_battery(records, spec));
      for (const auto& [name, value] : lorascan::battery_feature_scores(stats))
        entry.scores[name] = value;
      any_rates = true;
    }
    cohort.push_back(std::move(entry));
  }

  const lorascan::CalibrationReport report =
      lorascan::calibration_report(cohort, allow_mixed_rank);
  write_output(out_path, lorascan::calibration_to_json(
                             report, any_rates ? std::optional<std::string>(battery_flag)
                                               : std::nullopt));
  return kExitClean;
}

// --------------------------------------------------------------- score ----

const lorascan::CalibrationRow* pick_row(const lorascan::CalibrationReport& report,
                                         const std::vector<std::string>& allowed_names,
                                         const std::optional<std::string>& forced) {
  for (const lorascan::CalibrationRow& row : report.rows) {
    if (forced) {
      if (row.roc.feature_name == *forced) return &row;
      continue;
    }
    for (const std::string& name : allowed_names)
      if (row.roc.feature_name == name) return &row;  // rows sorted by AUC descending
  }
  return nullptr;
}

int cmd_score(const std::string& adapter_path, const std::string& calibration_path,
              const std::optional<std::string>& rates_path,
              const std::optional<std::string>& battery_flag,
              const std::optional<std::string>& weight_feature,
              const std::optional<std::string>& behavioral_feature, bool allow_rank_mismatch,
              const std::optional<std::string>& out_path) {
  const lorascan::LoadedCalibration calibration =
      lorascan::calibration_from_json(read_text_file(calibration_path));
  const ReportSummary adapter = summarize_adapter(adapter_path, nullptr);

  if (!allow_rank_mismatch && calibration.report.meta.rank != adapter.rank) {
    std::cerr << "score: calibration was built on rank " << calibration.report.meta.rank
              << " adapters but '" << adapter.adapter_id << "' has rank " << adapter.rank
              << ".\nfrobN thresholds are rank-specific: scores of a lower-rank cohort sit "
                 "entirely below a higher-rank threshold (recall 0) and higher-rank scores sit "
                 "entirely above it (every clean adapter flagged). Recalibrate on a cohort of "
                 "matching rank, or pass --allow-rank-mismatch to proceed anyway.\n";
    return kExitError;
  }

  std::optional<lorascan::FlagResult> weight_flag;
  lorascan::VerdictComponentDetail weight_detail;
  if (const auto* row = pick_row(calibration.report, lorascan::scalar_feature_names(),
                                 weight_feature)) {
    weight_flag = lorascan::score_adapter(adapter.features, row->point);
    if (weight_flag) weight_detail.point = row->point;
  }

  std::optional<lorascan::FlagResult> behavioral_flag;
  lorascan::VerdictComponentDetail behavioral_detail;
  if (rates_path) {
    const auto all_records = lorascan::attack_rates_from_json(read_text_file(*rates_path));
    auto records = records_for_adapter(all_records, adapter.adapter_id);
    if (records.empty()) records = all_records;
    const std::string battery_name =
        battery_flag ? *battery_flag : calibration.battery.value_or("A");
    const auto stats =
        lorascan::battery_stats(lorascan::filter_battery(records, battery_from_flag(battery_name)));
    const auto scores = lorascan::battery_feature_scores(stats);
    if (const auto* row = pick_row(calibration.report, lorascan::behavioral_feature_names(),
                                   behavioral_feature)) {
      behavioral_flag = lorascan::score_adapter(scores, row->point);
      if (behavioral_flag) behavioral_detail.point = row->point;
    }
  }

  const lorascan::Verdict verdict =
      lorascan::combined_verdict(adapter.adapter_id, behavioral_flag, weight_flag);
  write_output(out_path, lorascan::verdict_to_json(verdict, behavioral_detail, weight_detail));
  return verdict.suspect ? kExitSuspect : kExitClean;
}

// ---------------------------------------------------------- behavioral ----

int cmd_behavioral(const std::string& rates_path, const std::string& battery_flag,
                   const std::vector<std::string>& tau_flags,
                   const std::optional<std::string>& out_path) {
  const auto records = lorascan::attack_rates_from_json(read_text_file(rates_path));
  const auto spec = battery_from_flag(battery_flag);

  std::map<std::string, double> thresholds;
  for (const std::string& flag : tau_flags) {
    const std::size_t eq = flag.find('=');
    if (eq == std::string::npos)
      throw lorascan::Error("--tau expects <stat>=<value>, got '" + flag + "'");
    const std::string stat = flag.substr(0, eq);
    bool known = false;
    for (const std::string& name : lorascan::behavioral_feature_names()) known |= name == stat;
    if (!known) throw lorascan::Error("--tau: unknown statistic '" + stat + "'");
    thresholds[stat] = std::stod(flag.substr(eq + 1));
  }

  std::map<std::string, std::vector<lorascan::AttackRateRecord>> by_adapter;
  for (const auto& record : records) by_adapter[record.adapter_id].push_back(record);

  bool any_flagged = false;
  std::vector<lorascan::BehavioralReportRow> rows;
  for (const auto& [adapter_id, adapter_records] : by_adapter) {
    lorascan::BehavioralReportRow row;
    row.adapter_id = adapter_id;
    row.stats = lorascan::battery_stats(lorascan::filter_battery(adapter_records, spec));
    const auto scores = lorascan::battery_feature_scores(row.stats);
    for (const auto& [stat, tau] : thresholds) {
      const bool hit = scores.at(stat) > tau;  // strict, matching FPR=0 semantics
      row.flags[stat] = hit;
      any_flagged = any_flagged || hit;
    }
    rows.push_back(std::move(row));
  }

  write_output(out_path, lorascan::behavioral_report_to_json(spec.name, rows, thresholds));
  return !thresholds.empty() && any_flagged ? kExitSuspect : kExitClean;
}

// --------------------------------------------------------------- synth ----

int cmd_synth(const std::string& out_dir, const std::string& preset,
              const std::optional<std::string>& profile_path,
              const std::optional<std::string>& growth_path, bool poisoned, std::uint64_t seed,
              const std::optional<double>& sigma_rel, const std::optional<int>& layers,
              const std::optional<int>& rank, int cohort_clean, int cohort_poisoned,
              const std::string& dtype_flag) {
  lorascan::SynthProfile profile;
  lorascan::GrowthSpec growth;
  if (profile_path) {
    profile = lorascan::profile_from_json(read_text_file(*profile_path));
  } else if (preset == "qwen-1.5b") {
    profile = lorascan::qwen_1_5b_profile();
  } else if (preset == "qwen-7b") {
    profile = lorascan::qwen_7b_profile();
  } else {
    throw lorascan::Error("unknown preset '" + preset + "' (expected qwen-1.5b or qwen-7b)");
  }
  if (growth_path) {
    growth = lorascan::growth_from_json(read_text_file(*growth_path));
  } else {
    growth = preset == "qwen-7b" ? lorascan::qwen_7b_growth() : lorascan::qwen_1_5b_growth();
  }
  profile.seed = seed;
  if (sigma_rel) profile.sigma_rel = *sigma_rel;
  if (layers) profile.layers = *layers;
  if (rank) profile.rank = *rank;
  const auto dtype = lorascan::dtype_from_name(dtype_flag);
  if (!dtype) throw lorascan::Error("unknown dtype '" + dtype_flag + "'");

  const fs::path out(out_dir);
  if (cohort_clean > 0 || cohort_poisoned > 0) {
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    std::size_t written = 0;
    lorascan::gen_cohort_stream(
        cohort_clean, cohort_poisoned, profile, growth, seed,
        [&](lorascan::AdapterBundle&& bundle, bool is_poisoned) {
          lorascan::write_adapter_dir(out / bundle.adapter_id, bundle, *dtype);
          manifest.push_back({{"path", bundle.adapter_id},
                              {"label", is_poisoned ? "poisoned" : "clean"}});
          ++written;
        });
    std::ofstream manifest_out(out / "manifest.json", std::ios::trunc);
    if (!manifest_out) throw lorascan::Error("cannot write manifest in " + out.string());
    manifest_out << manifest.dump(2) << "\n";
    std::cerr << "wrote " << written << " adapters + manifest.json to " << out.string() << "\n";
    return kExitClean;
  }

  const lorascan::AdapterBundle bundle = lorascan::gen_adapter(
      profile, poisoned ? std::optional<lorascan::GrowthSpec>(growth) : std::nullopt,
      out.filename().string());
  lorascan::write_adapter_dir(out, bundle, *dtype);
  std::cerr << "wrote " << bundle.modules.size() << "-module adapter to " << out.string() << "\n";
  return kExitClean;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA adapter backdoor scanner"};
  app.set_version_flag("--version", lorascan::kToolVersion);
  app.require_subcommand(1);

  std::string format = "json";
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"json"}));

  // scan
  auto* scan = app.add_subcommand("scan", "Compute weight-level features for adapter dirs");
  std::vector<std::string> scan_paths;
  bool verbose_modules = false;
  std::optional<std::string> scan_out;
  scan->add_option("paths", scan_paths, "Adapter directories")->required()->expected(-1);
  scan->add_flag("--verbose-modules", verbose_modules, "Include per-module feature records");
  scan->add_option("-o,--output", scan_out, "Write report to file instead of stdout");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Calibrate detectors on a labeled cohort");
  std::string manifest_path;
  std::string calibrate_battery = "A";
  bool allow_mixed_rank = false;
  std::optional<std::string> calibrate_out;
  calibrate->add_option("--manifest", manifest_path, "Cohort manifest JSON")->required();
  calibrate->add_option("--battery", calibrate_battery,
                        "Battery for behavioral entries (A|B|C|D|custom:<file>)");
  calibrate->add_flag("--allow-mixed-rank", allow_mixed_rank,
                      "Permit cohorts that mix adapter ranks");
  calibrate->add_option("-o,--output", calibrate_out, "Write calibration file");

  // score
  auto* score = app.add_subcommand("score", "Score one adapter against a calibration file");
  std::string score_adapter_path, score_calibration;
  std::optional<std::string> score_rates, score_battery, score_weight_feature,
      score_behavioral_feature, score_out;
  bool allow_rank_mismatch = false;
  score->add_option("adapter", score_adapter_path, "Adapter directory or scan report")
      ->required();
  score->add_option("--calibration", score_calibration, "Calibration file")->required();
  score->add_option("--rates", score_rates, "Attack-rate records for the behavioral detector");
  score->add_option("--battery", score_battery, "Battery override for --rates");
  score->add_option("--weight-feature", score_weight_feature, "Weight feature override");
  score->add_option("--behavioral-feature", score_behavioral_feature,
                    "Behavioral feature override");
  score->add_flag("--allow-rank-mismatch", allow_rank_mismatch,
                  "Score against a calibration of a different rank");
  score->add_option("-o,--output", score_out, "Write verdict to file");

  // behavioral
  auto* behavioral = app.add_subcommand("behavioral", "Battery statistics per adapter");
  std::string rates_path, behavioral_battery = "A";
  std::vector<std::string> tau_flags;
  std::optional<std::string> behavioral_out;
  behavioral->add_option("--rates", rates_path, "Attack-rate record file")->required();
  behavioral->add_option("--battery", behavioral_battery, "A|B|C|D|custom:<file>");
  behavioral->add_option("--tau", tau_flags, "Flag threshold <stat>=<value>, repeatable");
  behavioral->add_option("-o,--output", behavioral_out, "Write report to file");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic adapter fixtures");
  std::string synth_out_dir, synth_preset = "qwen-1.5b", synth_dtype = "f32";
  std::optional<std::string> synth_profile, synth_growth;
  bool synth_poisoned = false;
  std::uint64_t synth_seed = 0;
  std::optional<double> synth_sigma_rel;
  std::optional<int> synth_layers, synth_rank;
  int synth_cohort_clean = 0, synth_cohort_poisoned = 0;
  synth->add_option("--out", synth_out_dir, "Output directory")->required();
  synth->add_option("--preset", synth_preset, "Profile preset (qwen-1.5b|qwen-7b)");
  synth->add_option("--profile", synth_profile, "Profile JSON file (overrides preset)");
  synth->add_option("--growth", synth_growth, "Growth spec JSON file");
  synth->add_flag("--poisoned", synth_poisoned, "Apply growth to the single generated adapter");
  synth->add_option("--seed", synth_seed, "Master seed");
  synth->add_option("--sigma-rel", synth_sigma_rel, "Relative frobN noise override");
  synth->add_option("--layers", synth_layers, "Layer count override");
  synth->add_option("--rank", synth_rank, "Rank override");
  synth->add_option("--clean", synth_cohort_clean, "Cohort mode: clean adapter count");
  synth->add_option("--poisoned-count", synth_cohort_poisoned,
                    "Cohort mode: poisoned adapter count");
  synth->add_option("--dtype", synth_dtype, "Storage dtype (f32|f16|bf16)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scan) return cmd_scan(scan_paths, verbose_modules, scan_out);
    if (*calibrate)
      return cmd_calibrate(manifest_path, calibrate_battery, allow_mixed_rank, calibrate_out);
    if (*score)
      return cmd_score(score_adapter_path, score_calibration, score_rates, score_battery,
                       score_weight_feature, score_behavioral_feature, allow_rank_mismatch,
                       score_out);
    if (*behavioral)
      return cmd_behavioral(rates_path, behavioral_battery, tau_flags, behavioral_out);
    if (*synth)
      return cmd_synth(synth_out_dir, synth_preset, synth_profile, synth_growth, synth_poisoned,
                       synth_seed, synth_sigma_rel, synth_layers, synth_rank, synth_cohort_clean,
                       synth_cohort_poisoned, synth_dtype);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
