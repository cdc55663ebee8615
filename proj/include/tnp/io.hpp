#pragma once

// Persistence: binary checkpoints, JSONL metric logs, CSV curves and run
// manifests.
//
// Checkpoint layout (little-endian throughout):
//   "TNPC" | u32 version | u64 config length | config text (key=value lines)
//   | u64 array count | per array: u64 name length, name bytes, u32 rank,
//   u64 dims[rank], f64 values (row-major)
// Optimizer moments, when present, are stored as extra arrays named
// "adam.m/<param>" and "adam.v/<param>", with the step in the config as
// "train.adam_step".

#include "tnp/model.hpp"
#include "tnp/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tnp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_model(const NeuralProcess& model, const AdamState* optimizer = nullptr);
void save_model(const NeuralProcess& model, const std::filesystem::path& path, const AdamState* optimizer = nullptr);

struct LoadedModel {
  std::unique_ptr<NeuralProcess> model;
  std::optional<AdamState> optimizer;
  KeyValues config;
};

// Throws NumericError on a bad magic, unknown version or truncated data.
LoadedModel deserialize_model(const std::string& bytes);
LoadedModel load_model(const std::filesystem::path& path);

struct MetricRecord {
  long long step = 0;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string task;  // optional label, omitted when empty
};

std::string metric_record_json(const MetricRecord& record);
// Appends one line and flushes; throws NumericError if the stream fails.
void write_metrics_record(std::ostream& out, const MetricRecord& record);
// Throws ConfigError naming the line on malformed input.
std::vector<MetricRecord> read_metrics_jsonl(std::istream& in);

// Groups the records of `metric` by step: "x,mean,std" with the sample std
// across records sharing a step (0 for one record).
std::string metrics_to_csv(const std::vector<MetricRecord>& records, const std::string& metric);

struct RunManifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> artifacts;

  std::string config_hash() const { return config.content_hash(); }
  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

std::string utc_timestamp();
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tnp
