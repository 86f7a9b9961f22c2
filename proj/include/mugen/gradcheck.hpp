#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mugen/core/ops.hpp"
#include "mugen/decoder.hpp"
#include "mugen/errors.hpp"
#include "mugen/losses.hpp"
#include "mugen/mugen_fusion.hpp"
#include "mugen/nn/parameters.hpp"
#include "mugen/cnn_branch.hpp"
#include "mugen/vit_branch.hpp"

// Finite-difference checks of the building blocks at f64, used by `mugen gradcheck`.

namespace mugen::gradcheck {

struct Result {
  std::string module;
  double rel_error = 0;
  double tolerance = 0;
  std::size_t coordinates = 0;
  bool pass() const { return rel_error < tolerance; }
};

inline Tensor<double> random_input(Shape dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                   bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(dims));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>(std::move(dims), std::move(v), requires_grad);
}

/// Compares autodiff against central differences on up to `max_coords` coordinates per
/// tensor and returns ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline double compare(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs, double h,
                      std::size_t max_coords, std::size_t* checked = nullptr) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss());
  std::mt19937_64 pick(11);
  double diff = 0, na = 0, nn_ = 0;
  std::size_t count = 0;
  for (auto& t : inputs) {
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(max_coords);
    }
    const auto grad = std::as_const(t).grad();
    auto data = t.data();
    for (auto i : coords) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff += (grad[i] - numeric) * (grad[i] - numeric);
      na += grad[i] * grad[i];
      nn_ += numeric * numeric;
      ++count;
    }
  }
  if (checked) *checked = count;
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
}

inline const std::vector<std::string>& module_names() {
  static const std::vector<std::string> names{"attention", "transformer_block", "basic_block", "mugen_fusion",
                                              "attention_gate", "decoder", "total_loss"};
  return names;
}

/// Runs the check for one named module. ReLU-heavy composites use h = 1e-5 so the
/// perturbation does not cross an activation kink.
inline Result run(const std::string& module, std::size_t max_coords = 48) {
  std::mt19937_64 rng(2024);
  nn::ParameterStore<double> store(7);
  auto probe_of = [&](const Shape& dims) { return random_input(dims, rng, -1, 1, false); };
  Result r{module};
  std::function<Tensor<double>()> loss;
  std::vector<Tensor<double>> inputs;
  double h = 1e-4;
  r.tolerance = 1e-3;

  if (module == "attention") {
    MultiHeadAttention<double> msa(store, "msa", 8, 2);
    auto x = random_input({2, 5, 8}, rng);
    auto w = probe_of({2, 5, 8});
    loss = [=] { return sum(mul(msa(x), w)); };
    inputs = {x};
  } else if (module == "transformer_block") {
    TransformerBlock<double> block(store, "block", VitConfig{4, 8, 2, 1, 2, true});
    auto x = random_input({2, 5, 8}, rng);
    auto w = probe_of({2, 5, 8});
    loss = [=] { return sum(mul(block(x), w)); };
    inputs = {x};
  } else if (module == "basic_block") {
    auto block = std::make_shared<BasicBlock<double>>(store, "block", 3, 4, 2);
    auto x = random_input({2, 3, 6, 6}, rng);
    auto w = probe_of({2, 4, 3, 3});
    loss = [=] { return sum(mul((*block)(x, true), w)); };
    inputs = {x};
    h = 1e-5;
  } else if (module == "mugen_fusion") {
    auto fuse = std::make_shared<MugenFusion<double>>(store, "fuse", 4, 4, 2);
    auto t = random_input({2, 4, 3, 3}, rng);
    auto x = random_input({2, 4, 3, 3}, rng);
    auto w = probe_of({2, 4, 3, 3});
    loss = [=] { return sum(mul((*fuse)(t, x, true), w)); };
    inputs = {t, x};
    h = 1e-5;
  } else if (module == "attention_gate") {
    AttentionGate<double> gate(store, "gate", 4, 4);
    auto g = random_input({2, 4, 3, 3}, rng);
    auto x = random_input({2, 4, 3, 3}, rng);
    auto w = probe_of({2, 4, 3, 3});
    loss = [=] { return sum(mul(gate(g, x), w)); };
    inputs = {g, x};
    h = 1e-5;
  } else if (module == "decoder") {
    auto dec = std::make_shared<Decoder<double>>(store, "dec", std::array<std::size_t, 3>{4, 4, 4}, 4);
    std::array<Tensor<double>, 3> y{random_input({2, 4, 1, 1}, rng), random_input({2, 4, 2, 2}, rng),
                                    random_input({2, 4, 4, 4}, rng)};
    auto w = probe_of({2, 1, 16, 16});
    loss = [=] { return sum(mul((*dec)(y, true).prediction, w)); };
    inputs = {y[0], y[1], y[2]};
    h = 1e-5;
  } else if (module == "total_loss") {
    auto st = random_input({2, 1, 6, 6}, rng, 0.05, 0.95);
    auto sr = random_input({2, 1, 6, 6}, rng, 0.05, 0.95);
    auto sz = random_input({2, 1, 6, 6}, rng, 0.05, 0.95);
    std::bernoulli_distribution coin(0.4);
    std::vector<double> g(72);
    for (auto& v : g) v = coin(rng) ? 1.0 : 0.0;
    Tensor<double> gt({2, 1, 6, 6}, g);
    LossConfig cfg;
    cfg.weight_kernel = 3;
    loss = [=] { return total_loss(st, sr, sz, gt, cfg).total; };
    inputs = {st, sr, sz};
    r.tolerance = 1e-4;
  } else {
    throw ConfigError("unknown gradcheck module '" + module + "'");
  }
  for (const auto& p : store.parameters()) inputs.push_back(p);
  r.rel_error = compare(loss, inputs, h, max_coords, &r.coordinates);
  return r;
}

}  // namespace mugen::gradcheck
