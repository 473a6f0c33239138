#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "graphmaker/graph.hpp"

namespace graphmaker {

struct TrainConfig {
  std::string variant = "async";  // sync | async
  bool conditional = false;

  // schedule
  int64_t sync_steps = 3;  // T when variant == sync
  int64_t attr_steps = 6;  // |T_X| when async
  int64_t edge_steps = 9;  // |T_A| when async
  double cosine_s = 0.008;

  // network sizes
  int64_t hidden_attr = 512;
  int64_t hidden_edge = 512;
  int64_t label_hidden = 64;
  int64_t time_hidden = 32;
  int64_t edge_hidden = 128;
  int64_t layers = 2;
  double dropout = 0.0;

  // optimization
  double lr_attr = 1e-3;
  double lr_edge = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t edge_batch = 16384;
  int64_t patience = 20;
  double clip_norm = 10.0;
  int64_t eval_interval = 100;
  int64_t max_steps = 50000;
  int64_t val_draws = 8;
  uint64_t seed = 0;

  void validate() const {
    if (variant != "sync" && variant != "async") {
      throw ConfigError("variant must be sync or async");
    }
    if (edge_batch < 1) throw ConfigError("edge_batch must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (lr_attr <= 0 || lr_edge <= 0) throw ConfigError("learning rates must be positive");
  }
};

// Built-in defaults keyed by graph size, matching the per-dataset
// hyperparameters the model ships with. Everything is overridable through a
// config file.
inline TrainConfig default_train_config(int64_t n, const std::string& variant, bool conditional) {
  TrainConfig c;
  c.variant = variant;
  c.conditional = conditional;
  const bool small = n <= 4000;
  const bool medium = !small && n <= 10000;
  c.time_hidden = small ? 32 : 16;
  c.patience = small ? 20 : 15;
  if (variant == "async") {
    c.dropout = small ? 0.1 : 0.0;
    c.attr_steps = (small || medium) ? 6 : 7;
    c.edge_steps = 9;
    c.hidden_attr = (small || medium) ? 512 : 1024;
    c.edge_batch = small ? 16384 : (medium ? 262144 : 2097152);
  } else {
    c.dropout = 0.0;
    c.sync_steps = 3;
    c.hidden_attr = 512;
    c.edge_batch = small ? 16384 : (medium ? 524288 : 2097152);
  }
  c.hidden_edge = 512;
  return c;
}

// Flat `key=value` config text, keys namespaced like `train.lr_attr`.
using KvConfig = std::map<std::string, std::string>;

inline KvConfig parse_kv_text(std::istream& in, const std::string& origin) {
  KvConfig kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline KvConfig parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError(path + ": cannot open");
  return parse_kv_text(f, path);
}

namespace detail {

inline int64_t kv_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": bad integer '" + v + "'");
  }
}

inline double kv_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": bad number '" + v + "'");
  }
}

inline bool kv_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": bad boolean '" + v + "'");
}

}  // namespace detail

inline void apply_train_overrides(TrainConfig& c, const KvConfig& kv) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("train.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (k == "variant") c.variant = value;
    else if (k == "conditional") c.conditional = detail::kv_bool(value, key);
    else if (k == "sync_steps") c.sync_steps = detail::kv_int(value, key);
    else if (k == "attr_steps") c.attr_steps = detail::kv_int(value, key);
    else if (k == "edge_steps") c.edge_steps = detail::kv_int(value, key);
    else if (k == "cosine_s") c.cosine_s = detail::kv_double(value, key);
    else if (k == "hidden_attr") c.hidden_attr = detail::kv_int(value, key);
    else if (k == "hidden_edge") c.hidden_edge = detail::kv_int(value, key);
    else if (k == "label_hidden") c.label_hidden = detail::kv_int(value, key);
    else if (k == "time_hidden") c.time_hidden = detail::kv_int(value, key);
    else if (k == "edge_hidden") c.edge_hidden = detail::kv_int(value, key);
    else if (k == "layers") c.layers = detail::kv_int(value, key);
    else if (k == "dropout") c.dropout = detail::kv_double(value, key);
    else if (k == "lr_attr") c.lr_attr = detail::kv_double(value, key);
    else if (k == "lr_edge") c.lr_edge = detail::kv_double(value, key);
    else if (k == "edge_batch") c.edge_batch = detail::kv_int(value, key);
    else if (k == "patience") c.patience = detail::kv_int(value, key);
    else if (k == "clip_norm") c.clip_norm = detail::kv_double(value, key);
    else if (k == "eval_interval") c.eval_interval = detail::kv_int(value, key);
    else if (k == "max_steps") c.max_steps = detail::kv_int(value, key);
    else if (k == "val_draws") c.val_draws = detail::kv_int(value, key);
    else if (k == "seed") c.seed = static_cast<uint64_t>(detail::kv_int(value, key));
    else throw ConfigError("unknown config key: " + key);
  }
}

inline std::string train_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "train.variant=" << c.variant << "\n";
  os << "train.conditional=" << (c.conditional ? "true" : "false") << "\n";
  os << "train.sync_steps=" << c.sync_steps << "\n";
  os << "train.attr_steps=" << c.attr_steps << "\n";
  os << "train.edge_steps=" << c.edge_steps << "\n";
  os << "train.cosine_s=" << c.cosine_s << "\n";
  os << "train.hidden_attr=" << c.hidden_attr << "\n";
  os << "train.hidden_edge=" << c.hidden_edge << "\n";
  os << "train.label_hidden=" << c.label_hidden << "\n";
  os << "train.time_hidden=" << c.time_hidden << "\n";
  os << "train.edge_hidden=" << c.edge_hidden << "\n";
  os << "train.layers=" << c.layers << "\n";
  os << "train.dropout=" << c.dropout << "\n";
  os << "train.lr_attr=" << c.lr_attr << "\n";
  os << "train.lr_edge=" << c.lr_edge << "\n";
  os << "train.edge_batch=" << c.edge_batch << "\n";
  os << "train.patience=" << c.patience << "\n";
  os << "train.clip_norm=" << c.clip_norm << "\n";
  os << "train.eval_interval=" << c.eval_interval << "\n";
  os << "train.max_steps=" << c.max_steps << "\n";
  os << "train.val_draws=" << c.val_draws << "\n";
  os << "train.seed=" << c.seed << "\n";
  return os.str();
}

}  // namespace graphmaker
