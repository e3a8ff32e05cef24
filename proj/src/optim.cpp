#include "mvc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "mvc/serialize.hpp"

namespace mvc {

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw UsageError("optimizer lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("optimizer momentum must be in [0,1)");
  if (!(weight_decay >= 0)) throw UsageError("optimizer weight_decay must be >= 0");
  if (kind == OptimizerKind::adam) {
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw UsageError("adam betas must be in [0,1)");
    if (!(eps > 0)) throw UsageError("adam eps must be > 0");
  }
}

void MultiStepSchedule::validate() const {
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) throw UsageError("schedule milestones must be strictly increasing");
  }
  if (!(factor > 1)) throw UsageError("schedule factor must be > 1");
}

double schedule_lr(double base_lr, std::size_t epoch, const MultiStepSchedule& sched) {
  const auto passed = std::count_if(sched.milestones.begin(), sched.milestones.end(),
                                    [epoch](std::size_t m) { return m < epoch + 1; });
  return base_lr / std::pow(sched.factor, static_cast<double>(passed));
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  cfg_.validate();
}

template <typename T>
void Optimizer<T>::ensure_state(const NamedTensors<T>& params) {
  if (first_.size() == params.size()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (first_[i].size() != params[i].second.numel()) throw UsageError("optimizer parameter list changed shape");
    }
    return;
  }
  if (!first_.empty()) throw UsageError("optimizer parameter list changed length");
  for (const auto& [name, p] : params) {
    first_.emplace_back(p.numel(), T(0));
    if (cfg_.kind == OptimizerKind::adam) second_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Optimizer<T>::step(const NamedTensors<T>& params, double lr) {
  ensure_state(params);
  ++steps_;
  const auto wd = static_cast<T>(cfg_.weight_decay);
  const auto rate = static_cast<T>(lr);
  // Stage the new values so a non-finite update leaves parameters untouched.
  std::vector<std::vector<T>> updated(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    const bool has_grad = p.has_grad();
    const std::span<const T> grad = std::as_const(p).grad();
    auto& buf = first_[i];
    auto& out = updated[i];
    out.assign(p.data().begin(), p.data().end());
    if (cfg_.kind == OptimizerKind::sgd) {
      const auto mom = static_cast<T>(cfg_.momentum);
      for (std::size_t j = 0; j < out.size(); ++j) {
        const T g = (has_grad ? grad[j] : T(0)) + wd * out[j];
        buf[j] = mom * buf[j] + g;
        out[j] -= rate * buf[j];
      }
    } else {
      auto& v = second_[i];
      const auto b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      const auto eps = static_cast<T>(cfg_.eps);
      const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(steps_)));
      const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(steps_)));
      for (std::size_t j = 0; j < out.size(); ++j) {
        const T g = (has_grad ? grad[j] : T(0)) + wd * out[j];
        buf[j] = b1 * buf[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        const T m_hat = buf[j] / c1, v_hat = v[j] / c2;
        out[j] -= rate * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
    for (const T x : out) {
      if (!std::isfinite(x)) throw NumericError("non-finite update for parameter '" + params[i].first + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    std::copy(updated[i].begin(), updated[i].end(), p.data().begin());
  }
}

template <typename T>
void Optimizer<T>::save_state(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < first_.size(); ++i) {
    save_tensor(dir / ("first." + std::to_string(i)), Tensor<T>({first_[i].size()}, first_[i]));
    if (!second_.empty()) {
      save_tensor(dir / ("second." + std::to_string(i)), Tensor<T>({second_[i].size()}, second_[i]));
    }
  }
  std::ofstream meta(dir / "optimizer.json", std::ios::trunc);
  meta << nlohmann::json{{"steps", steps_}, {"slots", first_.size()}}.dump() << '\n';
}

template <typename T>
void Optimizer<T>::load_state(const std::filesystem::path& dir, const NamedTensors<T>& params) {
  std::ifstream in(dir / "optimizer.json");
  if (!in) throw DataError("missing optimizer state in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  const auto slots = meta.at("slots").get<std::size_t>();
  first_.clear();
  second_.clear();
  if (slots == 0) {
    steps_ = meta.at("steps").get<std::size_t>();
    return;
  }
  if (slots != params.size()) throw DataError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < slots; ++i) {
    auto f = load_tensor<T>(dir / ("first." + std::to_string(i)));
    if (f.numel() != params[i].second.numel()) throw DataError("optimizer state shape mismatch");
    first_.emplace_back(f.data().begin(), f.data().end());
    if (cfg_.kind == OptimizerKind::adam) {
      auto s = load_tensor<T>(dir / ("second." + std::to_string(i)));
      second_.emplace_back(s.data().begin(), s.data().end());
    }
  }
  steps_ = meta.at("steps").get<std::size_t>();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace mvc
