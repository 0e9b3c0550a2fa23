#include "dacsm/checkpoint.hpp"

#include <fstream>
#include <map>

#include "json.hpp"

namespace dacsm {

namespace {

constexpr const char* kSchema = "dacsm-checkpoint-v1";

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  m.backbone.validate();
  m.head.validate();
  nlohmann::json j;
  j["schema"] = kSchema;
  j["config"] = {{"dim", m.cfg.dim},       {"layers", m.cfg.layers},   {"heads", m.cfg.heads},
                 {"patch", m.cfg.patch},   {"mlp_hidden", m.cfg.mlp_hidden}, {"classes", m.cfg.classes},
                 {"channels", m.cfg.channels}, {"side", m.cfg.side},   {"scales", m.cfg.scales}};
  nlohmann::json params = nlohmann::json::object();
  for_each_param(m, [&](const std::string& name, const Tensor& t) {
    params[name] = {{"shape", t.shape()},
                    {"data", std::vector<double>(t.data(), t.data() + t.size())}};
  });
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw CheckpointError("save_checkpoint: cannot open " + path + " for writing");
  out << j.dump(1) << "\n";
  if (!out) throw CheckpointError("save_checkpoint: write to " + path + " failed");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("load_checkpoint: " + path + " is not valid JSON: " + e.what());
  }
  try {
    if (!j.contains("schema") || j["schema"] != kSchema)
      throw CheckpointError("load_checkpoint: " + path + " has schema '" +
                            (j.contains("schema") ? j["schema"].dump() : "<missing>") + "', expected '" + kSchema +
                            "'");
    const nlohmann::json& c = j.at("config");
    ModelConfig cfg;
    cfg.dim = c.at("dim").get<int>();
    cfg.layers = c.at("layers").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.patch = c.at("patch").get<int>();
    cfg.mlp_hidden = c.at("mlp_hidden").get<int>();
    cfg.classes = c.at("classes").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.side = c.at("side").get<int>();
    cfg.scales = c.at("scales").get<std::vector<int>>();
    cfg.validate();

    // Build a correctly-shaped model, then overwrite every tensor from the
    // params map, demanding exact coverage.
    Rng rng(0);
    Model m = init_model(cfg, rng);
    const nlohmann::json& params = j.at("params");
    size_t used = 0;
    for_each_param(m, [&](const std::string& name, Tensor& t) {
      if (!params.contains(name)) throw CheckpointError("load_checkpoint: missing parameter '" + name + "'");
      const nlohmann::json& e = params.at(name);
      const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
      if (shape != t.shape())
        throw CheckpointError("load_checkpoint: parameter '" + name + "' has shape " + shape_to_string(shape) +
                              ", expected " + t.shape_str());
      const std::vector<double> data = e.at("data").get<std::vector<double>>();
      t = Tensor(shape, data);
      ++used;
    });
    if (used != params.size())
      throw CheckpointError("load_checkpoint: " + std::to_string(params.size() - used) +
                            " unexpected parameter entries in " + path);
    m.backbone.validate();
    m.head.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("load_checkpoint: malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace dacsm
