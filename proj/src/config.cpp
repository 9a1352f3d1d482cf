#include "mrla/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mrla {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& v, const std::string& where,
                        const std::string& key) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw config_error(where + "key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v, const std::string& where, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw config_error(where + "key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::vector<std::size_t> parse_list(const std::string& v, const std::string& where,
                                    const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) {
      throw config_error(where + "key '" + key + "': empty list element in '" + v + "'");
    }
    out.push_back(static_cast<std::size_t>(parse_u64(item, where, key)));
  }
  if (out.empty()) {
    throw config_error(where + "key '" + key + "': expected a comma-separated list");
  }
  return out;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value, const std::string& where) {
  if (key == "arch.stages") {
    arch_stages = parse_list(value, where, key);
  } else if (key == "arch.channels") {
    arch_channels = parse_list(value, where, key);
  } else if (key == "arch.spatial") {
    arch_spatial = parse_list(value, where, key);
  } else if (key == "arch.variant") {
    if (value != "cnn" && value != "vit") {
      throw config_error(where + "key 'arch.variant': expected cnn or vit, got '" + value +
                         "'");
    }
    arch_variant = value;
  } else if (key == "mode") {
    if (value != "off" && value != "base" && value != "light") {
      throw config_error(where + "key 'mode': expected off, base or light, got '" + value +
                         "'");
    }
    mode = value;
  } else if (key == "d_k") {
    d_k = static_cast<std::size_t>(parse_u64(value, where, key));
  } else if (key == "lr") {
    lr = parse_double(value, where, key);
    if (lr < 0.0) throw config_error(where + "key 'lr': must be >= 0");
  } else if (key == "epochs") {
    epochs = static_cast<std::size_t>(parse_u64(value, where, key));
  } else if (key == "steps_per_epoch") {
    steps_per_epoch = static_cast<std::size_t>(parse_u64(value, where, key));
    if (steps_per_epoch == 0) throw config_error(where + "key 'steps_per_epoch': must be >= 1");
  } else if (key == "seed") {
    seed = parse_u64(value, where, key);
  } else if (key == "survival_prob") {
    survival_prob = parse_double(value, where, key);
    if (survival_prob < 0.0 || survival_prob > 1.0) {
      throw config_error(where + "key 'survival_prob': must lie in [0, 1]");
    }
  } else if (key == "classes") {
    classes = static_cast<std::size_t>(parse_u64(value, where, key));
  } else if (key == "per_class") {
    per_class = static_cast<std::size_t>(parse_u64(value, where, key));
  } else if (key == "in_channels") {
    in_channels = static_cast<std::size_t>(parse_u64(value, where, key));
  } else if (key == "noise_std") {
    noise_std = parse_double(value, where, key);
    if (noise_std < 0.0) throw config_error(where + "key 'noise_std': must be >= 0");
  } else if (key == "out_dir") {
    out_dir = value;
  } else {
    throw config_error(where + "unknown key '" + key + "'");
  }
}

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config: " + path);
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) {
      throw config_error(where + "expected 'key = value', got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
  return cfg;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw config_error("override '" + assignment + "': expected key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)),
      "override '" + assignment + "': ");
}

ArchSpec Config::arch() const {
  if (arch_stages.size() != arch_channels.size() ||
      arch_stages.size() != arch_spatial.size()) {
    throw config_error("arch.stages, arch.channels and arch.spatial must have equal length");
  }
  ArchSpec spec;
  spec.variant = arch_variant == "cnn" ? BlockVariant::Cnn : BlockVariant::Vit;
  spec.dk = d_k;
  for (std::size_t i = 0; i < arch_stages.size(); ++i) {
    spec.stages.push_back({arch_stages[i], arch_channels[i], arch_spatial[i],
                           arch_spatial[i]});
  }
  spec.validate();
  return spec;
}

ModelMode Config::model_mode() const {
  if (mode == "off") return ModelMode::Off;
  if (mode == "base") return ModelMode::Base;
  return ModelMode::Light;
}

void Config::validate() const {
  arch();
  if (classes < 2) throw config_error("classes must be >= 2");
  if (per_class == 0) throw config_error("per_class must be >= 1");
  if (in_channels == 0) throw config_error("in_channels must be >= 1");
}

}  // namespace mrla
