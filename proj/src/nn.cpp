#include "mvc/nn.hpp"

#include <cmath>
#include <map>

#include "mvc/serialize.hpp"

namespace mvc {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (in_channels < 1) throw UsageError("encoder in_channels must be >= 1");
  if (stage_widths.empty()) throw UsageError("encoder needs at least one stage");
  if (embedding_dim < 2) throw UsageError("encoder embedding_dim must be >= 2");
  if (stage_widths.back() != embedding_dim) {
    throw UsageError("encoder last stage width must equal embedding_dim");
  }
  if (kernel_size < 1 || stride < 1) throw UsageError("encoder kernel_size and stride must be >= 1");
}

std::size_t EncoderConfig::output_side(std::size_t input) const {
  const std::size_t pad = kernel_size / 2;
  std::size_t side = input;
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    if (kernel_size > side + 2 * pad) throw ShapeError("input too small for the encoder depth");
    side = (side + 2 * pad - kernel_size) / stride + 1;
  }
  return side;
}

json EncoderConfig::to_json() const {
  return json{{"in_channels", in_channels},
              {"stage_widths", stage_widths},
              {"kernel_size", kernel_size},
              {"stride", stride},
              {"embedding_dim", embedding_dim}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.validate();
  return c;
}

void CmcConfig::validate() const {
  view1.validate();
  view2.validate();
  if (projection_dim < 2) throw UsageError("projection_dim must be >= 2");
}

json CmcConfig::to_json() const {
  return json{{"view1", view1.to_json()}, {"view2", view2.to_json()}, {"projection_dim", projection_dim}};
}

CmcConfig CmcConfig::from_json(const json& j) {
  CmcConfig c;
  c.view1 = EncoderConfig::from_json(j.at("view1"));
  c.view2 = EncoderConfig::from_json(j.at("view2"));
  c.projection_dim = j.at("projection_dim").get<std::size_t>();
  c.validate();
  return c;
}

template <typename T>
void kaiming_uniform(Tensor<T>& t, std::size_t fan_in, Engine& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, Engine& rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t in = cfg_.in_channels;
  for (const std::size_t width : cfg_.stage_widths) {
    Stage s;
    s.weight = Tensor<T>({width, in, cfg_.kernel_size, cfg_.kernel_size}, T(0), true);
    kaiming_uniform(s.weight, in * cfg_.kernel_size * cfg_.kernel_size, rng);
    s.gamma = Tensor<T>({width}, T(1), true);
    s.beta = Tensor<T>({width}, T(0), true);
    s.running_mean = Tensor<T>({width}, T(0));
    s.running_var = Tensor<T>({width}, T(1));
    stages_.push_back(std::move(s));
    in = width;
  }
}

template <typename T>
Tensor<T> Encoder<T>::forward(Tape<T>& tape, const Tensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("encoder expects [N," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                     to_string(x.shape()));
  }
  ops::BatchNormOptions bn;
  bn.training = training;
  Tensor<T> h = x;
  for (auto& s : stages_) {
    h = ops::conv2d(tape, h, s.weight, cfg_.stride, cfg_.kernel_size / 2);
    h = ops::batch_norm2d(tape, h, s.gamma, s.beta, s.running_mean, s.running_var, bn);
    h = ops::relu(tape, h);
  }
  return ops::global_avg_pool(tape, h);
}

template <typename T>
NamedTensors<T> Encoder<T>::parameters() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "conv.weight", stages_[i].weight);
    out.emplace_back(p + "bn.gamma", stages_[i].gamma);
    out.emplace_back(p + "bn.beta", stages_[i].beta);
  }
  return out;
}

template <typename T>
NamedTensors<T> Encoder<T>::buffers() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "bn.running_mean", stages_[i].running_mean);
    out.emplace_back(p + "bn.running_var", stages_[i].running_var);
  }
  return out;
}

template <typename T>
ProjectionHead<T>::ProjectionHead(std::size_t in_dim, std::size_t out_dim, Engine& rng)
    : weight_({out_dim, in_dim}, T(0), true), bias_({out_dim}, T(0), true) {
  kaiming_uniform(weight_, in_dim, rng);
}

template <typename T>
Tensor<T> ProjectionHead<T>::forward(Tape<T>& tape, const Tensor<T>& z) const {
  return ops::l2_normalize(tape, ops::linear(tape, z, weight_, bias_), 1);
}

template <typename T>
NamedTensors<T> ProjectionHead<T>::parameters() const {
  return {{"weight", weight_}, {"bias", bias_}};
}

namespace {

template <typename T>
void append_prefixed(NamedTensors<T>& out, const std::string& prefix, const NamedTensors<T>& in) {
  for (const auto& [name, t] : in) out.emplace_back(prefix + name, t);
}

}  // namespace

template <typename T>
CmcModel<T>::CmcModel(const CmcConfig& cfg, std::uint64_t seed)
    : CmcModel(cfg, make_engine(seed, "init")) {}

template <typename T>
CmcModel<T>::CmcModel(const CmcConfig& cfg, Engine rng)
    : cfg_(cfg),
      enc1_(cfg.view1, rng),
      enc2_(cfg.view2, rng),
      proj1_(cfg.view1.embedding_dim, cfg.projection_dim, rng),
      proj2_(cfg.view2.embedding_dim, cfg.projection_dim, rng) {
  cfg_.validate();
}

template <typename T>
NamedTensors<T> CmcModel<T>::parameters() const {
  NamedTensors<T> out = encoder_parameters();
  append_prefixed(out, "proj1.", proj1_.parameters());
  append_prefixed(out, "proj2.", proj2_.parameters());
  return out;
}

template <typename T>
NamedTensors<T> CmcModel<T>::encoder_parameters() const {
  NamedTensors<T> out;
  append_prefixed(out, "encoder1.", enc1_.parameters());
  append_prefixed(out, "encoder2.", enc2_.parameters());
  return out;
}

template <typename T>
NamedTensors<T> CmcModel<T>::buffers() const {
  NamedTensors<T> out;
  append_prefixed(out, "encoder1.", enc1_.buffers());
  append_prefixed(out, "encoder2.", enc2_.buffers());
  return out;
}

template <typename T>
std::size_t CmcModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

template <typename T>
void CmcModel<T>::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CmcModel<T>::encode(Tape<T>& tape, const Tensor<T>& v1,
                                                    const Tensor<T>& v2, bool training) {
  if (v1.rank() != 4 || v2.rank() != 4 || v1.dim(0) != v2.dim(0)) {
    throw ShapeError("encode: view batches " + to_string(v1.shape()) + " and " + to_string(v2.shape()) +
                     " are not paired");
  }
  return {enc1_.forward(tape, v1, training), enc2_.forward(tape, v2, training)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CmcModel<T>::project(Tape<T>& tape, const Tensor<T>& z1,
                                                     const Tensor<T>& z2) const {
  return {proj1_.forward(tape, z1), proj2_.forward(tape, z2)};
}

template <typename T>
Tensor<T> CmcModel<T>::extract_features(const Tensor<T>& v1, const Tensor<T>& v2) {
  Tape<T> tape;
  tape.set_recording(false);
  auto [z1, z2] = encode(tape, v1, v2, false);
  return ops::concat(tape, {z1, z2}, 1);
}

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t feature_dim, std::size_t num_classes, TaskMode mode,
                                  Engine& rng)
    : weight_({num_classes, feature_dim}, T(0), true), bias_({num_classes}, T(0), true), mode_(mode) {
  if (num_classes < 1 || feature_dim < 1) throw UsageError("classifier head needs classes and features");
  kaiming_uniform(weight_, feature_dim, rng);
}

template <typename T>
Tensor<T> ClassifierHead<T>::logits(Tape<T>& tape, const Tensor<T>& features) const {
  return ops::linear(tape, features, weight_, bias_);
}

template <typename T>
Tensor<T> ClassifierHead<T>::loss(Tape<T>& tape, const Tensor<T>& features,
                                  std::span<const Label> targets) const {
  if (features.rank() != 2 || features.dim(0) != targets.size()) {
    throw ShapeError("classifier: " + std::to_string(targets.size()) + " targets for features " +
                     to_string(features.shape()));
  }
  const std::size_t n = targets.size(), c = num_classes();
  const Tensor<T> out = logits(tape, features);
  if (mode_ == TaskMode::single_label) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto* cls = std::get_if<std::size_t>(&targets[i]);
      if (!cls || *cls >= c) throw ShapeError("single-label target must be a class index < " + std::to_string(c));
      idx[i] = *cls;
    }
    return ops::softmax_cross_entropy(tape, out, idx);
  }
  Tensor<T> multi_hot({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const auto* hot = std::get_if<std::vector<std::uint8_t>>(&targets[i]);
    if (!hot || hot->size() != c) throw ShapeError("multi-label target must be a length-" + std::to_string(c) + " multi-hot vector");
    for (std::size_t j = 0; j < c; ++j) multi_hot[i * c + j] = (*hot)[j] ? T(1) : T(0);
  }
  return ops::sigmoid_binary_cross_entropy(tape, out, multi_hot);
}

template <typename T>
NamedTensors<T> ClassifierHead<T>::parameters() const {
  return {{"head.weight", weight_}, {"head.bias", bias_}};
}

template <typename T>
void assign_tensors(const NamedTensors<T>& dst, const NamedTensors<T>& src) {
  std::map<std::string, Tensor<T>> by_name(src.begin(), src.end());
  for (auto [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw DataError("tensor '" + name + "' has shape " + to_string(it->second.shape()) +
                      ", expected " + to_string(t.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  }
}

template <typename T>
void save_tensors(const std::filesystem::path& dir, const NamedTensors<T>& tensors) {
  for (const auto& [name, t] : tensors) save_tensor(dir / name, t);
}

template <typename T>
void load_tensors(const std::filesystem::path& dir, const NamedTensors<T>& into) {
  NamedTensors<T> loaded;
  for (const auto& [name, t] : into) loaded.emplace_back(name, load_tensor<T>(dir / name));
  assign_tensors(into, loaded);
}

template class Encoder<float>;
template class Encoder<double>;
template class ProjectionHead<float>;
template class ProjectionHead<double>;
template class CmcModel<float>;
template class CmcModel<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;

#define MVC_INSTANTIATE_NN(T)                                                            \
  template void kaiming_uniform<T>(Tensor<T>&, std::size_t, Engine&);                    \
  template void assign_tensors<T>(const NamedTensors<T>&, const NamedTensors<T>&);       \
  template void save_tensors<T>(const std::filesystem::path&, const NamedTensors<T>&);   \
  template void load_tensors<T>(const std::filesystem::path&, const NamedTensors<T>&);

MVC_INSTANTIATE_NN(float)
MVC_INSTANTIATE_NN(double)
#undef MVC_INSTANTIATE_NN

}  // namespace mvc
