// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/model/model.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::model {

using nn::Array;
using nn::Parameter;
using nn::Tensor;

namespace {

constexpr std::size_t kArea = features::kPatchArea;
constexpr float kInitStd = 0.02f;

Array trunc_normal(nn::Shape shape, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, kInitStd);
  Array a(std::move(shape));
  for (float& v : a.vec()) {
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0f * kInitStd);
  }
  return a;
}

Parameter zeros(std::size_t n) { return Parameter(Array({n}, 0.0f)); }
Parameter ones(std::size_t n) { return Parameter(Array({n}, 1.0f)); }

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.embed_dim = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_patches = 256;
  return c;
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || n_heads == 0) throw ConfigError("embed_dim and n_heads must be positive");
  if (embed_dim % n_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (max_patches == 0) throw ConfigError("max_patches must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim}, {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},     {"mlp_ratio", c.mlp_ratio},
                     {"max_patches", c.max_patches}, {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.max_patches = j.value("max_patches", c.max_patches);
  c.dropout = j.value("dropout", c.dropout);
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = make_stream(seed, 0, 0x6d6f64656cull);
  const std::size_t d = config_.embed_dim, h = d * config_.mlp_ratio;
  encoder_.patch_w = Parameter(trunc_normal({kArea, d}, rng));
  encoder_.patch_b = zeros(d);
  encoder_.pos = Parameter(trunc_normal({config_.max_patches, d}, rng));
  encoder_.mask_token = zeros(d);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    EncoderBlock b;
    b.ln1_g = ones(d);
    b.ln1_b = zeros(d);
    b.wq = Parameter(trunc_normal({d, d}, rng));
    b.bq = zeros(d);
    b.wk = Parameter(trunc_normal({d, d}, rng));
    b.bk = zeros(d);
    b.wv = Parameter(trunc_normal({d, d}, rng));
    b.bv = zeros(d);
    b.wo = Parameter(trunc_normal({d, d}, rng));
    b.bo = zeros(d);
    b.ln2_g = ones(d);
    b.ln2_b = zeros(d);
    b.w1 = Parameter(trunc_normal({d, h}, rng));
    b.b1 = zeros(h);
    b.w2 = Parameter(trunc_normal({h, d}, rng));
    b.b2 = zeros(d);
    encoder_.blocks.push_back(std::move(b));
  }
  heads_.reg_w = Parameter(trunc_normal({d, 1}, rng));
  heads_.reg_b = zeros(1);
  heads_.cls_w = Parameter(trunc_normal({d, d}, rng));
  heads_.cls_b = zeros(d);
  heads_.rec_w = Parameter(trunc_normal({d, kArea}, rng));
  heads_.rec_b = zeros(kArea);
}

std::vector<NamedParameter> Model::named_parameters() const {
  std::vector<NamedParameter> out;
  out.emplace_back("encoder.patch_w", encoder_.patch_w);
  out.emplace_back("encoder.patch_b", encoder_.patch_b);
  out.emplace_back("encoder.pos", encoder_.pos);
  out.emplace_back("encoder.mask_token", encoder_.mask_token);
  for (std::size_t l = 0; l < encoder_.blocks.size(); ++l) {
    const auto& b = encoder_.blocks[l];
    const std::string p = "encoder.block" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_g", b.ln1_g);
    out.emplace_back(p + "ln1_b", b.ln1_b);
    out.emplace_back(p + "wq", b.wq);
    out.emplace_back(p + "bq", b.bq);
    out.emplace_back(p + "wk", b.wk);
    out.emplace_back(p + "bk", b.bk);
    out.emplace_back(p + "wv", b.wv);
    out.emplace_back(p + "bv", b.bv);
    out.emplace_back(p + "wo", b.wo);
    out.emplace_back(p + "bo", b.bo);
    out.emplace_back(p + "ln2_g", b.ln2_g);
    out.emplace_back(p + "ln2_b", b.ln2_b);
    out.emplace_back(p + "w1", b.w1);
    out.emplace_back(p + "b1", b.b1);
    out.emplace_back(p + "w2", b.w2);
    out.emplace_back(p + "b2", b.b2);
  }
  out.emplace_back("heads.reg_w", heads_.reg_w);
  out.emplace_back("heads.reg_b", heads_.reg_b);
  out.emplace_back("heads.cls_w", heads_.cls_w);
  out.emplace_back("heads.cls_b", heads_.cls_b);
  out.emplace_back("heads.rec_w", heads_.rec_w);
  out.emplace_back("heads.rec_b", heads_.rec_b);
  return out;
}

std::vector<Parameter> Model::parameters() const {
  std::vector<Parameter> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value().size();
  return n;
}

// ---- forward -------------------------------------------------------------------

Tensor embed_patches(const Model& model, const Tensor& patches) {
  const auto& s = patches.shape();
  if (s.size() != 2 || s[1] != kArea) {
    throw DimensionError("patches must be I x 256, got " + nn::shape_str(s));
  }
  if (s[0] > model.config().max_patches) {
    throw DimensionError(std::to_string(s[0]) + " patches exceed max_patches " +
                         std::to_string(model.config().max_patches));
  }
  const auto& enc = model.encoder();
  return nn::linear(patches, enc.patch_w.tensor(), enc.patch_b.tensor());
}

Tensor add_positional(const Model& model, const Tensor& embeddings) {
  const std::size_t i = embeddings.shape()[0];
  if (i > model.config().max_patches) {
    throw DimensionError(std::to_string(i) + " patches exceed max_patches " +
                         std::to_string(model.config().max_patches));
  }
  return nn::add(embeddings, nn::slice_rows(model.encoder().pos.tensor(), 0, i));
}

namespace {

Tensor maybe_dropout(const Tensor& x, const Model& model, const ForwardOptions& opts) {
  if (!opts.train || model.config().dropout <= 0.0f) return x;
  if (opts.rng == nullptr) throw ContractError("dropout in train mode needs an rng");
  return nn::dropout(x, model.config().dropout, *opts.rng);
}

Tensor run_block(const Model& model, const EncoderBlock& b, const Tensor& x,
                 const ForwardOptions& opts) {
  const Tensor h = nn::layer_norm(x, b.ln1_g.tensor(), b.ln1_b.tensor());
  const Tensor q = nn::linear(h, b.wq.tensor(), b.bq.tensor());
  const Tensor k = nn::linear(h, b.wk.tensor(), b.bk.tensor());
  const Tensor v = nn::linear(h, b.wv.tensor(), b.bv.tensor());
  Array probs;
  const Tensor att = nn::multi_head_attention(q, k, v, model.config().n_heads,
                                              opts.attention != nullptr ? &probs : nullptr);
  if (opts.attention != nullptr) opts.attention->push_back(std::move(probs));
  const Tensor y = nn::add(
      x, maybe_dropout(nn::linear(att, b.wo.tensor(), b.bo.tensor()), model, opts));
  const Tensor h2 = nn::layer_norm(y, b.ln2_g.tensor(), b.ln2_b.tensor());
  const Tensor f = nn::linear(nn::gelu(nn::linear(h2, b.w1.tensor(), b.b1.tensor())),
                              b.w2.tensor(), b.b2.tensor());
  return nn::add(y, maybe_dropout(f, model, opts));
}

}  // namespace

Tensor encode(const Model& model, const Tensor& x, const ForwardOptions& opts) {
  if (x.shape().size() != 2 || x.shape()[1] != model.config().embed_dim) {
    throw DimensionError("encoder input must be I x " + std::to_string(model.config().embed_dim) +
                         ", got " + nn::shape_str(x.shape()));
  }
  if (!x.value().all_finite()) throw NumericError("non-finite encoder input");
  Tensor h = x;
  const auto& blocks = model.encoder().blocks;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    try {
      h = run_block(model, blocks[l], h, opts);
    } catch (const NumericError& e) {
      throw NumericError("encoder layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return h;
}

Tensor mean_pool(const Tensor& encoded) {
  if (encoded.shape().size() != 2 || encoded.shape()[0] == 0) {
    throw DimensionError("mean_pool expects a non-empty I x D input");
  }
  return nn::mean(encoded, 0, true);
}

Tensor regress(const Model& model, const Tensor& pooled) {
  const auto& h = model.heads();
  return nn::reshape(nn::linear(pooled, h.reg_w.tensor(), h.reg_b.tensor()), {1});
}

Tensor classify(const Model& model, const Tensor& encoded_rows) {
  const auto& h = model.heads();
  return nn::linear(encoded_rows, h.cls_w.tensor(), h.cls_b.tensor());
}

Tensor reconstruct(const Model& model, const Tensor& encoded_rows) {
  const auto& h = model.heads();
  return nn::linear(encoded_rows, h.rec_w.tensor(), h.rec_b.tensor());
}

Tensor forward_regression(const Model& model, const Array& patches, const ForwardOptions& opts) {
  const Tensor e = embed_patches(model, nn::constant(patches));
  return regress(model, mean_pool(encode(model, add_positional(model, e), opts)));
}

// ---- checkpoints ---------------------------------------------------------------

const Array* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : tensors) {
    if (n == name) return &a;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const Model& model, const features::FeatureConfig& features,
                           nlohmann::json meta) {
  Checkpoint c;
  c.model = model.config();
  c.features = features;
  c.meta = std::move(meta);
  for (const auto& [name, p] : model.named_parameters()) c.tensors.emplace_back(name, p.value());
  return c;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated checkpoint " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [name, a] : ckpt.tensors) {
    shapes.push_back({{"name", name}, {"shape", a.shape()}});
  }
  nlohmann::json header{{"model", ckpt.model},
                        {"features", ckpt.features},
                        {"feature_fingerprint", ckpt.features.fingerprint()},
                        {"meta", ckpt.meta},
                        {"tensors", shapes}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write("SSBC", 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, a] : ckpt.tensors) {
      os.write(reinterpret_cast<const char*>(a.data()),
               static_cast<std::streamsize>(a.size() * sizeof(float)));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + p);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SSBC", 4) != 0) throw DataError(p + " is not an SSBC checkpoint");
  const auto version = get<std::uint32_t>(is, p);
  if (version != kCheckpointVersion) {
    throw CompatibilityError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  const auto len = get<std::uint64_t>(is, p);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("truncated checkpoint header " + p);
  const auto header = nlohmann::json::parse(text);
  Checkpoint c;
  c.model = header.at("model").get<ModelConfig>();
  c.features = header.at("features").get<features::FeatureConfig>();
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Array a(t.at("shape").get<nn::Shape>());
    is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint payload " + p);
    c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(a));
  }
  return c;
}

void load_parameters(Model& model, const Checkpoint& ckpt, LoadScope scope) {
  for (auto& [name, p] : model.named_parameters()) {
    const bool encoder = name.rfind("encoder.", 0) == 0;
    if (scope == LoadScope::kEncoderOnly && !encoder) continue;
    const Array* a = ckpt.find(name);
    if (a == nullptr) throw CompatibilityError("checkpoint lacks parameter " + name);
    if (a->shape() != p.shape()) {
      throw CompatibilityError("parameter " + name + " has shape " + nn::shape_str(a->shape()) +
                               " in checkpoint, model expects " + nn::shape_str(p.shape()));
    }
    p.value() = *a;
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m(ckpt.model, 0);
  load_parameters(m, ckpt, LoadScope::kAll);
  return m;
}

void store_optimizer(Checkpoint& ckpt, const Model& model, const nn::Adam& opt) {
  const auto named = model.named_parameters();
  const auto& states = opt.states();
  if (states.size() != named.size()) throw ContractError("optimizer does not match the model");
  for (std::size_t i = 0; i < named.size(); ++i) {
    ckpt.tensors.emplace_back("adam.m/" + named[i].first, states[i].m);
    ckpt.tensors.emplace_back("adam.v/" + named[i].first, states[i].v);
  }
  ckpt.meta["optimizer"] = {{"step_count", states.empty() ? 0 : states[0].step_count},
                            {"lr", opt.lr()}};
}

void restore_optimizer(const Checkpoint& ckpt, const Model& model, nn::Adam& opt) {
  const auto named = model.named_parameters();
  auto& states = opt.states();
  if (states.size() != named.size()) throw ContractError("optimizer does not match the model");
  if (!ckpt.meta.contains("optimizer")) throw CompatibilityError("checkpoint has no optimizer state");
  const auto steps = ckpt.meta["optimizer"].at("step_count").get<std::uint64_t>();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const Array* m = ckpt.find("adam.m/" + named[i].first);
    const Array* v = ckpt.find("adam.v/" + named[i].first);
    if (m == nullptr || v == nullptr || m->shape() != states[i].m.shape() ||
        v->shape() != states[i].v.shape()) {
      throw CompatibilityError("optimizer state missing or mismatched for " + named[i].first);
    }
    states[i].m = *m;
    states[i].v = *v;
    states[i].step_count = steps;
  }
  opt.set_lr(ckpt.meta["optimizer"].at("lr").get<double>());
}

void store_normalizer(Checkpoint& ckpt, const features::FeatureNormalizer& norm) {
  if (norm.empty()) return;
  ckpt.tensors.emplace_back("norm.mean", Array({norm.mean.size()}, norm.mean));
  ckpt.tensors.emplace_back("norm.std", Array({norm.stddev.size()}, norm.stddev));
}

features::FeatureNormalizer restore_normalizer(const Checkpoint& ckpt) {
  features::FeatureNormalizer n;
  const Array* m = ckpt.find("norm.mean");
  const Array* s = ckpt.find("norm.std");
  if (m != nullptr && s != nullptr) {
    n.mean = m->vec();
    n.stddev = s->vec();
  }
  return n;
}

void check_feature_compat(const Checkpoint& ckpt, const features::FeatureConfig& extractor) {
  const std::string a = ckpt.features.fingerprint(), b = extractor.fingerprint();
  if (a != b) {
    throw CompatibilityError("feature config mismatch: checkpoint " + a + ", extractor " + b);
  }
}

}  // namespace ssbrpe::model
