#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "omlab/detector.hpp"

namespace omlab {

struct LossBreakdown {
  Node total;  // scalar, differentiable
  double cls = 0.0, reg = 0.0, ctr = 0.0, aux = 0.0;
  std::size_t positives = 0;
};

/// Detection loss for one forward pass; targets holds one entry per image.
LossBreakdown compute_losses(const Detector& model, const ForwardOutput& out, std::span<const DenseTargets> targets);

/// SGD with momentum and L2 weight decay (decay added to the gradient).
class Sgd {
 public:
  Sgd(std::span<NamedParameter> params, double momentum, double weight_decay);

  void zero_grad();
  /// Rescales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void step(double lr);

 private:
  std::vector<Node> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss_cls = 0.0, loss_reg = 0.0, loss_ctr = 0.0, loss_aux = 0.0;
  double lr = 0.0;

  double total() const noexcept { return loss_cls + loss_reg + loss_ctr + loss_aux; }
  nlohmann::json to_json() const;
};

struct TrainOptions {
  /// Stop after this many optimizer steps (0 = run the full schedule).
  std::size_t max_steps = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Detector model;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;  // total loss per step, before the update
};

/// Images [B,3,S,S] for scenes[indices[i]].
Array stack_images(std::span<const Scene> scenes, std::span<const std::size_t> indices);

TrainResult train(std::span<const Scene> scenes, const DetectorConfig& config, const TrainOptions& options = {});

}  // namespace omlab
