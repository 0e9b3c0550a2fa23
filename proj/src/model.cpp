#include "dacsm/model.hpp"

#include <cmath>

namespace dacsm {

void ModelConfig::validate() const {
  if (dim < 1 || layers < 1 || heads < 1 || patch < 1 || mlp_hidden < 1 || classes < 1 || channels < 1)
    throw ParameterError("ModelConfig: all sizes must be positive");
  if (dim % heads != 0)
    throw ParameterError("ModelConfig: heads=" + std::to_string(heads) + " must divide dim=" + std::to_string(dim));
  ScaleSet{scales}.validate(patch);
  if (native_scale_index() < 0)
    throw ParameterError("ModelConfig: native side " + std::to_string(side) +
                         " must be one of the scales (a positional bank is required for evaluation)");
}

int ModelConfig::native_scale_index() const { return ScaleSet{scales}.index_of(side); }

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
  Tensor t({rows, cols});
  const double std = std::sqrt(2.0 / (rows + cols));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}

Tensor gaussian_vec(int n, double std, Rng& rng) {
  Tensor t({n});
  for (int i = 0; i < n; ++i) t[i] = rng.normal(0.0, std);
  return t;
}

}  // namespace

Model init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  BackboneParams& b = m.backbone;
  b.patch = cfg.patch;
  b.dim = cfg.dim;
  b.channels = cfg.channels;
  b.scale_sides = cfg.scales;
  b.patch_projection = xavier(cfg.patch * cfg.patch * cfg.channels, cfg.dim, rng);
  b.cls_embedding = gaussian_vec(cfg.dim, 0.02, rng);

  // Native bank drawn, others interpolated from it.
  const int native = cfg.native_scale_index();
  const int native_grid = cfg.side / cfg.patch;
  Tensor native_bank({native_grid * native_grid + 1, cfg.dim});
  for (int i = 0; i < native_bank.size(); ++i) native_bank[i] = rng.normal(0.0, 0.02);
  for (size_t k = 0; k < cfg.scales.size(); ++k) {
    const int grid = cfg.scales[k] / cfg.patch;
    b.pos_banks.push_back(static_cast<int>(k) == native ? native_bank
                                                        : interpolate_pos_embedding(native_bank, grid));
  }

  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams layer;
    layer.norm_attn.gamma = Tensor::full({cfg.dim}, 1.0);
    layer.norm_attn.beta = Tensor({cfg.dim});
    layer.attn.w_q = xavier(cfg.dim, cfg.dim, rng);
    layer.attn.w_k = xavier(cfg.dim, cfg.dim, rng);
    layer.attn.w_v = xavier(cfg.dim, cfg.dim, rng);
    layer.attn.heads = cfg.heads;
    layer.norm_mlp.gamma = Tensor::full({cfg.dim}, 1.0);
    layer.norm_mlp.beta = Tensor({cfg.dim});
    layer.mlp.w1 = xavier(cfg.dim, cfg.mlp_hidden, rng);
    layer.mlp.b1 = Tensor({cfg.mlp_hidden});
    layer.mlp.w2 = xavier(cfg.mlp_hidden, cfg.dim, rng);
    layer.mlp.b2 = Tensor({cfg.dim});
    b.layers.push_back(std::move(layer));
  }
  b.validate();

  m.head = init_subcenters(cfg.classes, static_cast<int>(cfg.scales.size()), cfg.dim, 0.01, rng);
  return m;
}

namespace {

template <typename ModelT, typename Fn>
void enumerate_params(ModelT& m, const Fn& fn) {
  fn("backbone.patch_projection", m.backbone.patch_projection);
  fn("backbone.cls_embedding", m.backbone.cls_embedding);
  for (size_t k = 0; k < m.backbone.pos_banks.size(); ++k)
    fn("backbone.pos_bank." + std::to_string(k), m.backbone.pos_banks[k]);
  for (size_t l = 0; l < m.backbone.layers.size(); ++l) {
    const std::string pre = "backbone.layer." + std::to_string(l) + ".";
    auto& layer = m.backbone.layers[l];
    fn(pre + "norm_attn.gamma", layer.norm_attn.gamma);
    fn(pre + "norm_attn.beta", layer.norm_attn.beta);
    fn(pre + "attn.w_q", layer.attn.w_q);
    fn(pre + "attn.w_k", layer.attn.w_k);
    fn(pre + "attn.w_v", layer.attn.w_v);
    fn(pre + "norm_mlp.gamma", layer.norm_mlp.gamma);
    fn(pre + "norm_mlp.beta", layer.norm_mlp.beta);
    fn(pre + "mlp.w1", layer.mlp.w1);
    fn(pre + "mlp.b1", layer.mlp.b1);
    fn(pre + "mlp.w2", layer.mlp.w2);
    fn(pre + "mlp.b2", layer.mlp.b2);
  }
  fn("head.subcenters", m.head.weights);
}

}  // namespace

void for_each_param(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  enumerate_params(m, fn);
}

void for_each_param(const Model& m, const std::function<void(const std::string&, const Tensor&)>& fn) {
  enumerate_params(m, fn);
}

namespace {

// Shared wiring for bind_model and assemble_model. When ids is null, fresh
// leaves are created from the model tensors; otherwise nodes are consumed from
// ids in for_each_param order.
BoundModel wire_model(Tape& tape, const Model& m, const std::vector<NodeId>* ids) {
  m.backbone.validate();
  m.head.validate();
  BoundModel bm;
  bm.backbone.params = &m.backbone;

  size_t next = 0;
  auto push = [&](const std::string& path, const Tensor& t) {
    NodeId id;
    if (ids == nullptr) {
      id = tape.leaf(t);
    } else {
      if (next >= ids->size()) throw ParameterError("assemble_model: ran out of nodes at " + path);
      id = (*ids)[next++];
      const Tensor& v = tape.value(id);
      if (!v.same_shape(t))
        throw DimensionError("assemble_model: node shape " + v.shape_str() + " does not match " + path + " " +
                             t.shape_str());
    }
    bm.leaves.emplace_back(path, id);
    return id;
  };
  bm.backbone.patch_projection = push("backbone.patch_projection", m.backbone.patch_projection);
  bm.backbone.cls_embedding = push("backbone.cls_embedding", m.backbone.cls_embedding);
  for (size_t k = 0; k < m.backbone.pos_banks.size(); ++k)
    bm.backbone.pos_banks.push_back(push("backbone.pos_bank." + std::to_string(k), m.backbone.pos_banks[k]));
  for (size_t l = 0; l < m.backbone.layers.size(); ++l) {
    const std::string pre = "backbone.layer." + std::to_string(l) + ".";
    const LayerParams& src = m.backbone.layers[l];
    BoundLayer bl;
    bl.norm_attn.gamma = push(pre + "norm_attn.gamma", src.norm_attn.gamma);
    bl.norm_attn.beta = push(pre + "norm_attn.beta", src.norm_attn.beta);
    bl.attn.w_q = push(pre + "attn.w_q", src.attn.w_q);
    bl.attn.w_k = push(pre + "attn.w_k", src.attn.w_k);
    bl.attn.w_v = push(pre + "attn.w_v", src.attn.w_v);
    bl.attn.heads = src.attn.heads;
    bl.norm_mlp.gamma = push(pre + "norm_mlp.gamma", src.norm_mlp.gamma);
    bl.norm_mlp.beta = push(pre + "norm_mlp.beta", src.norm_mlp.beta);
    bl.mlp.w1 = push(pre + "mlp.w1", src.mlp.w1);
    bl.mlp.b1 = push(pre + "mlp.b1", src.mlp.b1);
    bl.mlp.w2 = push(pre + "mlp.w2", src.mlp.w2);
    bl.mlp.b2 = push(pre + "mlp.b2", src.mlp.b2);
    bm.backbone.layers.push_back(bl);
  }
  bm.head = push("head.subcenters", m.head.weights);
  if (ids != nullptr && next != ids->size())
    throw ParameterError("assemble_model: " + std::to_string(ids->size() - next) + " unused nodes");
  return bm;
}

}  // namespace

BoundModel bind_model(Tape& tape, const Model& m) { return wire_model(tape, m, nullptr); }

BoundModel assemble_model(Tape& tape, const Model& m, const std::vector<NodeId>& ids) {
  return wire_model(tape, m, &ids);
}

}  // namespace dacsm
