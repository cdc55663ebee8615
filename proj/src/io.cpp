#include "tnp/io.hpp"

#include "tnp/errors.hpp"

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace tnp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'N', 'P', 'C'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

void put_array(std::string& out, const std::string& name, const Matrix& m) {
  put_string(out, name);
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw NumericError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const NeuralProcess& model, const AdamState* optimizer) {
  KeyValues config = model.config_values();
  if (optimizer != nullptr) config.set("train.adam_step", std::to_string(optimizer->step));
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, config.serialize());
  const ParameterSet& params = model.parameters();
  const bool moments = optimizer != nullptr && optimizer->m.size() == static_cast<std::size_t>(params.size());
  put<std::uint64_t>(out, static_cast<std::uint64_t>(params.size()) * (moments ? 3 : 1));
  for (int i = 0; i < params.size(); ++i) put_array(out, params.name(i), params[i]);
  if (moments) {
    for (int i = 0; i < params.size(); ++i) put_array(out, "adam.m/" + params.name(i), optimizer->m[static_cast<std::size_t>(i)]);
    for (int i = 0; i < params.size(); ++i) put_array(out, "adam.v/" + params.name(i), optimizer->v[static_cast<std::size_t>(i)]);
  }
  return out;
}

void save_model(const NeuralProcess& model, const std::filesystem::path& path, const AdamState* optimizer) {
  write_text_file(path, serialize_model(model, optimizer));
}

LoadedModel deserialize_model(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(4) != std::string(kMagic, 4)) throw NumericError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw NumericError("unsupported checkpoint version " + std::to_string(version));
  LoadedModel out;
  out.config = KeyValues::parse(r.get_bytes(r.get<std::uint64_t>()));
  out.model = make_model(out.config, 0);
  ParameterSet& params = out.model->parameters();

  std::map<std::string, Matrix> arrays;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t a = 0; a < count; ++a) {
    const std::string name = r.get_bytes(r.get<std::uint64_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw NumericError("checkpoint array " + name + " has rank " + std::to_string(rank));
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != 0 && cols > (bytes.size() / sizeof(double)) / rows) throw NumericError("checkpoint is truncated");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const std::string raw = r.get_bytes(rows * cols * sizeof(double));
    std::memcpy(m.data(), raw.data(), raw.size());
    arrays[name] = std::move(m);
  }
  if (!r.done()) throw NumericError("checkpoint has trailing bytes");

  auto take = [&](const std::string& name, const Matrix& like) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw NumericError("checkpoint lacks array " + name);
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols())
      throw NumericError("checkpoint array " + name + " has the wrong shape");
    return it->second;
  };
  for (int i = 0; i < params.size(); ++i) params[i] = take(params.name(i), params[i]);
  if (out.config.contains("train.adam_step")) {
    AdamState s;
    s.step = out.config.get_int("train.adam_step", 0);
    if (arrays.count("adam.m/" + params.name(0)) != 0) {
      for (int i = 0; i < params.size(); ++i) {
        s.m.push_back(take("adam.m/" + params.name(i), params[i]));
        s.v.push_back(take("adam.v/" + params.name(i), params[i]));
      }
    }
    out.optimizer = std::move(s);
  }
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericError("cannot read checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

// ------------------------------------------------------------------ metrics

std::string metric_record_json(const MetricRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["metric"] = record.metric;
  if (std::isfinite(record.value)) {
    j["value"] = record.value;
  } else {
    j["value"] = nullptr;
  }
  j["seed"] = record.seed;
  if (!record.task.empty()) j["task"] = record.task;
  return j.dump();
}

void write_metrics_record(std::ostream& out, const MetricRecord& record) {
  out << metric_record_json(record) << '\n';
  out.flush();
  if (!out) throw NumericError("cannot write metrics record");
}

std::vector<MetricRecord> read_metrics_jsonl(std::istream& in) {
  std::vector<MetricRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MetricRecord r;
      r.step = j.at("step").get<long long>();
      r.metric = j.at("metric").get<std::string>();
      r.value = j.at("value").is_null() ? std::nan("") : j.at("value").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("task")) r.task = j.at("task").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string metrics_to_csv(const std::vector<MetricRecord>& records, const std::string& metric) {
  std::map<long long, std::vector<double>> by_step;
  for (const auto& r : records)
    if (r.metric == metric) by_step[r.step].push_back(r.value);
  std::string out = "x,mean,std\n";
  for (const auto& [step, values] : by_step) {
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double sd = 0.0;
    if (values.size() > 1) {
      for (const double v : values) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / static_cast<double>(values.size() - 1));
    }
    out += std::to_string(step) + "," + format_double(mean) + "," + format_double(sd) + "\n";
  }
  return out;
}

// ----------------------------------------------------------------- manifest

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config.entries()) cfg[k] = v;
  j["config"] = cfg;
  j["config_hash"] = config_hash();
  j["seed"] = seed;
  j["started"] = started;
  j["finished"] = finished;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) m.config.set(k, v.get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out) throw NumericError("cannot write " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tnp
