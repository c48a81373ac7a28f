#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace smore::nn {

// Dense ReLU network: affine layers with ReLU on hidden layers and a linear
// output layer. weights[l] has shape [out_l x in_l].
struct DenseNet {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  int in_dim() const { return layer_sizes.front(); }
  int out_dim() const { return layer_sizes.back(); }
  int n_layers() const { return static_cast<int>(weights.size()); }
  std::size_t n_params() const;
};

// He-style uniform fan-in init for the weights, zero biases.
DenseNet make_dense_net(const std::vector<int>& layer_sizes, std::uint64_t seed);

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l]: batch entering layer l
  std::vector<Eigen::MatrixXd> pre;     // pre[l]: pre-activation of layer l
};

Eigen::MatrixXd forward(const DenseNet& net, const Eigen::MatrixXd& batch);
Eigen::MatrixXd forward(const DenseNet& net, const Eigen::MatrixXd& batch,
                        ForwardCache& cache);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd input;  // gradient with respect to the batch
};

// Exact reverse-mode gradients of the forward map; upstream is dL/d(output).
Gradients backward(const DenseNet& net, const ForwardCache& cache,
                   const Eigen::MatrixXd& upstream);

struct AdamState {
  double base_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
};

AdamState make_adam(const DenseNet& net, double base_lr = 3e-4);

// Standard Adam update with bias correction; lr_now is the effective rate
// for this step (e.g. from cosine_lr).
void adam_step(AdamState& state, DenseNet& net, const Gradients& grads,
               double lr_now);

struct CosineSchedule {
  int total_steps;
  double floor_fraction = 0.0;
};

// base_lr * (floor + (1 - floor) * 0.5 * (1 + cos(pi * step / total))),
// with step clamped to [0, total_steps].
double cosine_lr(const CosineSchedule& schedule, double base_lr, int step);

// Maps a batch of network outputs to (loss, dL/d(output)).
using LossFn =
    std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

// Max relative error between analytic and central-difference parameter
// gradients, denominator max(|a|, |b|, 1e-8).
double gradient_check(const DenseNet& net, const LossFn& loss,
                      const Eigen::MatrixXd& batch, double h = 1e-5);

// Checkpoint format: one JSON header line {"layer_sizes": [...], "count": N}
// followed by N little-endian 32-bit floats (per layer: row-major weights,
// then biases).
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

}  // namespace smore::nn
