#include "run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nsr::cli {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type (" + j.at(key).dump() + ")");
  }
}

void read_count(const json& j, const char* key, std::size_t& dst, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  dst = v.get<std::size_t>();
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).lexically_normal().string();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"model", "schedule", "degradation", "data", "train", "seed"}, "run config");
  if (!j.contains("model")) throw ConfigError("run config needs a 'model' section");

  RunConfig rc;
  rc.model = model_config_from_json(j.at("model").dump());

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"base_lr", "factor", "milestones", "epochs"}, "schedule");
    read(s, "base_lr", rc.train.schedule.base_lr, "schedule");
    read(s, "factor", rc.train.schedule.factor, "schedule");
    read(s, "milestones", rc.train.schedule.milestones, "schedule");
    read_count(s, "epochs", rc.train.schedule.epochs, "schedule");
  }
  if (j.contains("degradation")) {
    const json& d = j.at("degradation");
    reject_unknown(d, {"task", "sigma"}, "degradation");
    read(d, "task", rc.train.degradation.task, "degradation");
    read(d, "sigma", rc.train.degradation.sigma, "degradation");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"train_dir", "val_dir"}, "data");
    read(d, "train_dir", rc.train_dir, "data");
    read(d, "val_dir", rc.val_dir, "data");
    rc.train_dir = resolve(rc.train_dir, base_dir);
    rc.val_dir = resolve(rc.val_dir, base_dir);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"batch_size", "patch_size", "steps_per_epoch"}, "train");
    read_count(t, "batch_size", rc.train.batch_size, "train");
    read_count(t, "patch_size", rc.train.patch_size, "train");
    read_count(t, "steps_per_epoch", rc.train.steps_per_epoch, "train");
  }
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    rc.train.seed = s.get<std::uint64_t>();
    rc.has_seed = true;
  }
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (const char* env = std::getenv("NSR_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError(std::string("NSR_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return config.value_or(0);
}

}  // namespace nsr::cli
