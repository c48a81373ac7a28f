#include "smore/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smore::nn {

namespace {

void require_batch_width(const DenseNet& net, const Eigen::MatrixXd& batch,
                         const char* what) {
  if (batch.cols() != net.in_dim()) {
    std::ostringstream msg;
    msg << what << ": batch width " << batch.cols()
        << " does not match input dim " << net.in_dim();
    throw std::invalid_argument(msg.str());
  }
}

void write_le_float(std::ostream& out, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  char bytes[4] = {static_cast<char>(bits & 0xff),
                   static_cast<char>((bits >> 8) & 0xff),
                   static_cast<char>((bits >> 16) & 0xff),
                   static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float read_le_float(const unsigned char* bytes) {
  std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                       (static_cast<std::uint32_t>(bytes[1]) << 8) |
                       (static_cast<std::uint32_t>(bytes[2]) << 16) |
                       (static_cast<std::uint32_t>(bytes[3]) << 24);
  float value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

}  // namespace

std::size_t DenseNet::n_params() const {
  std::size_t total = 0;
  for (int l = 0; l < n_layers(); ++l) {
    total += static_cast<std::size_t>(weights[l].size()) +
             static_cast<std::size_t>(biases[l].size());
  }
  return total;
}

DenseNet make_dense_net(const std::vector<int>& layer_sizes,
                        std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("make_dense_net: need at least input and "
                                "output sizes");
  }
  for (int w : layer_sizes) {
    if (w < 0) throw std::invalid_argument("make_dense_net: negative width");
  }
  DenseNet net;
  net.layer_sizes = layer_sizes;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    int in = layer_sizes[l], out = layer_sizes[l + 1];
    double limit = std::sqrt(6.0 / std::max(1, in));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd w(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = u(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return net;
}

Eigen::MatrixXd forward(const DenseNet& net, const Eigen::MatrixXd& batch,
                        ForwardCache& cache) {
  require_batch_width(net, batch, "forward");
  cache.inputs.clear();
  cache.pre.clear();
  Eigen::MatrixXd x = batch;
  for (int l = 0; l < net.n_layers(); ++l) {
    cache.inputs.push_back(x);
    Eigen::MatrixXd pre =
        (x * net.weights[l].transpose()).rowwise() +
        net.biases[l].transpose();
    cache.pre.push_back(pre);
    x = l + 1 < net.n_layers() ? pre.cwiseMax(0.0) : pre;
  }
  return x;
}

Eigen::MatrixXd forward(const DenseNet& net, const Eigen::MatrixXd& batch) {
  ForwardCache cache;
  return forward(net, batch, cache);
}

Gradients backward(const DenseNet& net, const ForwardCache& cache,
                   const Eigen::MatrixXd& upstream) {
  if (static_cast<int>(cache.inputs.size()) != net.n_layers()) {
    throw std::invalid_argument("backward: cache does not match the net");
  }
  if (upstream.rows() != cache.pre.back().rows() ||
      upstream.cols() != cache.pre.back().cols()) {
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  }
  Gradients g;
  g.weights.resize(net.n_layers());
  g.biases.resize(net.n_layers());
  Eigen::MatrixXd delta = upstream;
  for (int l = net.n_layers() - 1; l >= 0; --l) {
    if (l + 1 < net.n_layers()) {
      delta = delta.cwiseProduct(
          (cache.pre[l].array() > 0.0).cast<double>().matrix());
    }
    g.weights[l] = delta.transpose() * cache.inputs[l];
    g.biases[l] = delta.colwise().sum().transpose();
    delta = (delta * net.weights[l]).eval();
  }
  g.input = delta;
  return g;
}

AdamState make_adam(const DenseNet& net, double base_lr) {
  AdamState state;
  state.base_lr = base_lr;
  for (int l = 0; l < net.n_layers(); ++l) {
    state.m_w.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(),
                                              net.weights[l].cols()));
    state.v_w.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(),
                                              net.weights[l].cols()));
    state.m_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    state.v_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
  return state;
}

namespace {

template <typename Tensor>
void adam_update_tensor(Tensor& param, Tensor& m, Tensor& v,
                        const Tensor& grad, double lr_now, double beta1,
                        double beta2, double eps, double bc1, double bc2) {
  if (!grad.allFinite()) {
    throw std::invalid_argument("adam_step: non-finite gradient");
  }
  m = beta1 * m + (1.0 - beta1) * grad;
  v = (beta2 * v.array() + (1.0 - beta2) * grad.array().square()).matrix();
  param -= (lr_now * (m.array() / bc1) /
            ((v.array() / bc2).sqrt() + eps))
               .matrix();
}

}  // namespace

void adam_step(AdamState& state, DenseNet& net, const Gradients& grads,
               double lr_now) {
  if (static_cast<int>(grads.weights.size()) != net.n_layers()) {
    throw std::invalid_argument("adam_step: gradient layer count mismatch");
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (int l = 0; l < net.n_layers(); ++l) {
    adam_update_tensor(net.weights[l], state.m_w[l], state.v_w[l],
                       grads.weights[l], lr_now, state.beta1, state.beta2,
                       state.eps, bc1, bc2);
    adam_update_tensor(net.biases[l], state.m_b[l], state.v_b[l],
                       grads.biases[l], lr_now, state.beta1, state.beta2,
                       state.eps, bc1, bc2);
  }
}

double cosine_lr(const CosineSchedule& schedule, double base_lr, int step) {
  if (schedule.total_steps <= 0) {
    throw std::invalid_argument("cosine_lr: total_steps must be positive");
  }
  int clamped = std::max(0, std::min(step, schedule.total_steps));
  double progress = static_cast<double>(clamped) / schedule.total_steps;
  double floor = schedule.floor_fraction;
  return base_lr * (floor + (1.0 - floor) * 0.5 *
                                (1.0 + std::cos(M_PI * progress)));
}

double gradient_check(const DenseNet& net, const LossFn& loss,
                      const Eigen::MatrixXd& batch, double h) {
  DenseNet work = net;
  ForwardCache cache;
  Eigen::MatrixXd out = forward(work, batch, cache);
  auto [base_loss, upstream] = loss(out);
  (void)base_loss;
  Gradients analytic = backward(work, cache, upstream);

  double max_rel = 0.0;
  auto probe = [&](double& param, double analytic_grad) {
    double saved = param;
    param = saved + h;
    double up = loss(forward(work, batch)).first;
    param = saved - h;
    double down = loss(forward(work, batch)).first;
    param = saved;
    double numeric = (up - down) / (2.0 * h);
    double denom = std::max({std::abs(numeric), std::abs(analytic_grad),
                             1e-8});
    max_rel = std::max(max_rel, std::abs(numeric - analytic_grad) / denom);
  };
  for (int l = 0; l < work.n_layers(); ++l) {
    for (int r = 0; r < work.weights[l].rows(); ++r) {
      for (int c = 0; c < work.weights[l].cols(); ++c) {
        probe(work.weights[l](r, c), analytic.weights[l](r, c));
      }
    }
    for (int r = 0; r < work.biases[l].size(); ++r) {
      probe(work.biases[l](r), analytic.biases[l](r));
    }
  }
  return max_rel;
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot open " + path);
  }
  nlohmann::json header;
  header["layer_sizes"] = net.layer_sizes;
  header["count"] = net.n_params();
  out << header.dump() << '\n';
  for (int l = 0; l < net.n_layers(); ++l) {
    for (int r = 0; r < net.weights[l].rows(); ++r) {
      for (int c = 0; c < net.weights[l].cols(); ++c) {
        write_le_float(out, static_cast<float>(net.weights[l](r, c)));
      }
    }
    for (int r = 0; r < net.biases[l].size(); ++r) {
      write_le_float(out, static_cast<float>(net.biases[l](r)));
    }
  }
  if (!out) {
    throw std::runtime_error("save_checkpoint: write failed for " + path);
  }
}

DenseNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot open " + path);
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw std::runtime_error("load_checkpoint: missing header in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: bad header in " + path +
                             ": " + e.what());
  }
  std::vector<int> layer_sizes =
      header.at("layer_sizes").get<std::vector<int>>();
  std::size_t count = header.at("count").get<std::size_t>();

  DenseNet net = make_dense_net(layer_sizes, 0);
  if (net.n_params() != count) {
    throw std::runtime_error(
        "load_checkpoint: header count does not match layer sizes");
  }
  std::size_t header_bytes = header_line.size() + 1;
  std::vector<unsigned char> buf(count * 4);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    std::ostringstream msg;
    msg << "load_checkpoint: " << path << " truncated at byte "
        << header_bytes + static_cast<std::size_t>(in.gcount())
        << " (expected " << buf.size() << " data bytes)";
    throw std::runtime_error(msg.str());
  }
  std::size_t i = 0;
  for (int l = 0; l < net.n_layers(); ++l) {
    for (int r = 0; r < net.weights[l].rows(); ++r) {
      for (int c = 0; c < net.weights[l].cols(); ++c) {
        net.weights[l](r, c) = read_le_float(&buf[4 * i++]);
      }
    }
    for (int r = 0; r < net.biases[l].size(); ++r) {
      net.biases[l](r) = read_le_float(&buf[4 * i++]);
    }
  }
  return net;
}

}  // namespace smore::nn
