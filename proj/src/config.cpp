#include "dacsm/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace dacsm {

namespace {

struct KeySpec {
  const char* key;
  const char* def;
  const char* doc;
};

constexpr std::array<KeySpec, 41> kKeys{{
    {"seed", "7", "training seed (init, shuffling, augmentation, noise)"},
    {"out_dir", "runs/default", "output directory for metrics, summary and checkpoint"},
    {"epochs", "24", "training epochs"},
    {"warmup_epochs", "4", "epochs before the target pseudo-label term activates"},
    {"pseudo_refresh", "5", "re-assign pseudo-labels every n epochs"},
    {"batch_size", "16", "target samples per optimizer step"},
    {"learning_rate", "0.08", "SGD learning rate"},
    {"momentum", "0.9", "SGD momentum"},
    {"weight_decay", "0.0001", "L2 weight decay"},
    {"crop_pad", "4", "source augmentation: upscale by this, random-crop back"},
    {"noise.enabled", "true", "inject K/V noise in cross-attention"},
    {"noise.sigma", "0.05", "stddev of the K/V noise"},
    {"noise.layers", "all", "layers receiving noise: 'all' or comma list of indices"},
    {"loss.cls_s", "1", "weight of the source classification term"},
    {"loss.cls_s2t", "1", "weight of the translated-source classification term"},
    {"loss.dst", "1", "weight of the distillation term"},
    {"loss.cls_t", "1", "weight of the target pseudo-label term"},
    {"loss.style", "0.01", "weight of the style-statistics term"},
    {"loss.tau", "2", "distillation softening temperature"},
    {"loss.teacher_first", "true", "KL(teacher || student) when true, reversed otherwise"},
    {"model.dim", "32", "token embedding width"},
    {"model.layers", "2", "transformer depth"},
    {"model.heads", "4", "attention heads (must divide dim)"},
    {"model.patch", "8", "patch side in pixels"},
    {"model.mlp_hidden", "64", "feed-forward hidden width"},
    {"model.scales", "16,24,32", "resize sides, ascending; one sub-center and bank each"},
    {"data.classes", "4", "number of shape classes (max 5)"},
    {"data.per_class", "20", "samples per class per domain"},
    {"data.side", "32", "native image side (must appear in model.scales)"},
    {"data.channels", "3", "image channels"},
    {"data.seed", "99", "benchmark generation seed"},
    {"data.source.style_shift", "0", "source channel-mean shift"},
    {"data.source.contrast", "1", "source contrast factor"},
    {"data.source.texture_noise", "0.02", "source per-pixel noise"},
    {"data.source.scale_min", "0.55", "source min object fraction"},
    {"data.source.scale_max", "0.85", "source max object fraction"},
    {"data.target.style_shift", "0.3", "target channel-mean shift"},
    {"data.target.contrast", "0.8", "target contrast factor"},
    {"data.target.texture_noise", "0.08", "target per-pixel noise"},
    {"data.target.scale_min", "0.35", "target min object fraction"},
    {"data.target.scale_max", "0.6", "target max object fraction"},
}};

const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& s : kKeys)
    if (key == s.key) return &s;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const KeySpec& s : kKeys) c.values_[s.key] = s.def;
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  RunConfig c = defaults();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("config: unknown key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_kv(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' expects comma-separated integers, got '" + v + "'");
    }
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a non-empty list, got '" + v + "'");
  return out;
}

TrainConfig RunConfig::to_train_config() const {
  TrainConfig t;
  t.model.dim = get_int("model.dim");
  t.model.layers = get_int("model.layers");
  t.model.heads = get_int("model.heads");
  t.model.patch = get_int("model.patch");
  t.model.mlp_hidden = get_int("model.mlp_hidden");
  t.model.scales = get_int_list("model.scales");
  t.model.classes = get_int("data.classes");
  t.model.channels = get_int("data.channels");
  t.model.side = get_int("data.side");
  t.epochs = get_int("epochs");
  t.warmup_epochs = get_int("warmup_epochs");
  t.pseudo_refresh = get_int("pseudo_refresh");
  t.batch_size = get_int("batch_size");
  t.learning_rate = get_double("learning_rate");
  t.momentum = get_double("momentum");
  t.weight_decay = get_double("weight_decay");
  t.crop_pad = get_int("crop_pad");
  t.noise_enabled = get_bool("noise.enabled");
  t.noise_sigma = get_double("noise.sigma");
  const std::string layers = raw("noise.layers");
  if (layers != "all") {
    t.noise_layers.assign(static_cast<size_t>(t.model.layers), false);
    for (int idx : get_int_list("noise.layers")) {
      if (idx < 0 || idx >= t.model.layers)
        throw ConfigError("config: noise.layers index " + std::to_string(idx) + " outside [0, " +
                          std::to_string(t.model.layers) + ")");
      t.noise_layers[static_cast<size_t>(idx)] = true;
    }
  }
  t.weights.cls_s = get_double("loss.cls_s");
  t.weights.cls_s2t = get_double("loss.cls_s2t");
  t.weights.dst = get_double("loss.dst");
  t.weights.cls_t = get_double("loss.cls_t");
  t.weights.style = get_double("loss.style");
  t.distill.tau = get_double("loss.tau");
  t.distill.teacher_first = get_bool("loss.teacher_first");
  t.seed = static_cast<std::uint64_t>(get_int("seed"));
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: invalid configuration: ") + e.what());
  }
  return t;
}

SyntheticDomainSpec RunConfig::to_domain_spec() const {
  SyntheticDomainSpec s;
  s.classes = get_int("data.classes");
  s.per_class = get_int("data.per_class");
  s.side = get_int("data.side");
  s.channels = get_int("data.channels");
  s.seed = static_cast<std::uint64_t>(get_int("data.seed"));
  auto style = [&](const std::string& pre) {
    DomainStyle d;
    d.style_shift = get_double(pre + ".style_shift");
    d.contrast = get_double(pre + ".contrast");
    d.texture_noise = get_double(pre + ".texture_noise");
    d.scale_min = get_double(pre + ".scale_min");
    d.scale_max = get_double(pre + ".scale_max");
    return d;
  };
  s.source = style("data.source");
  s.target = style("data.target");
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: invalid benchmark spec: ") + e.what());
  }
  return s;
}

std::string RunConfig::describe_keys() {
  std::string out;
  for (const KeySpec& s : kKeys) {
    out += s.key;
    out += " (default ";
    out += s.def;
    out += "): ";
    out += s.doc;
    out += "\n";
  }
  return out;
}

}  // namespace dacsm
