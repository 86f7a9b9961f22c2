#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mugen/config.hpp"
#include "mugen/core/adam.hpp"
#include "mugen/core/checkpoint.hpp"
#include "mugen/core/tape.hpp"
#include "mugen/data.hpp"
#include "mugen/losses.hpp"
#include "mugen/metrics.hpp"
#include "mugen/model.hpp"

namespace mugen {

using Model = MugenNet<float>;

struct DataSplits {
  std::vector<SegSample> train, val, test;
};

/// Loads the configured dataset at the run's resolution. Manifests without split tags are
/// split 7:2:1 with the run seed.
inline DataSplits prepare_data(const RunConfig& cfg) {
  DataSplits out;
  if (cfg.data.path.empty()) {
    std::mt19937_64 rng(cfg.data.synthetic_seed);
    std::vector<SegSample> all;
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < cfg.data.synthetic_samples; ++i) {
      const auto s = synth_sample(rng, cfg.resolution);
      all.push_back(make_sample(std::to_string(i), s.image, s.mask, cfg.resolution));
      entries.push_back({std::to_string(i), std::to_string(i), ""});
    }
    const auto parts = split(entries, {}, cfg.data.synthetic_seed);
    auto pick = [&](const std::vector<ManifestEntry>& es) {
      std::vector<SegSample> v;
      for (const auto& e : es) v.push_back(all[std::stoul(e.image)]);
      return v;
    };
    out.train = pick(parts.train);
    out.val = pick(parts.val);
    out.test = pick(parts.test);
    return out;
  }
  auto manifest = read_manifest(cfg.data.path);
  const bool tagged = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                  [](const ManifestEntry& e) { return !e.split.empty(); });
  if (!tagged) manifest.entries = [&] {
    const auto parts = split(manifest.entries, {}, cfg.seed);
    std::vector<ManifestEntry> all = parts.train;
    all.insert(all.end(), parts.val.begin(), parts.val.end());
    all.insert(all.end(), parts.test.begin(), parts.test.end());
    return all;
  }();
  out.train = load_samples(manifest, manifest.subset("train"), cfg.resolution);
  out.val = load_samples(manifest, manifest.subset("val"), cfg.resolution);
  out.test = load_samples(manifest, manifest.subset("test"), cfg.resolution);
  return out;
}

struct Batch {
  Tensor<float> images;  // [B, 3, H, W]
  Tensor<float> masks;   // [B, 1, H, W]
};

inline Batch make_batch(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const auto& first = samples[indices.front()];
  const std::size_t h = first.height, w = first.width, c = first.channels;
  std::vector<float> img, msk;
  img.reserve(indices.size() * c * h * w);
  msk.reserve(indices.size() * h * w);
  for (auto i : indices) {
    const auto& s = samples[i];
    if (s.height != h || s.width != w || s.channels != c) throw DataError("samples in a batch differ in size");
    img.insert(img.end(), s.image.begin(), s.image.end());
    msk.insert(msk.end(), s.mask.begin(), s.mask.end());
  }
  return {Tensor<float>({indices.size(), c, h, w}, std::move(img)),
          Tensor<float>({indices.size(), 1, h, w}, std::move(msk))};
}

/// Eval-mode fused predictions for every sample, paired with its ground truth.
inline std::vector<MaskPair> predict_pairs(Model& model, const std::vector<SegSample>& samples,
                                           std::size_t batch_size = 16) {
  std::vector<MaskPair> pairs;
  pairs.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(samples, idx);
    const auto out = model.forward(batch.images, false);
    const auto pred = out.s_z().values();
    const std::size_t h = samples[start].height, w = samples[start].width, px = h * w;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      MaskPair p{{h, w, std::vector<double>(pred.begin() + b * px, pred.begin() + (b + 1) * px)},
                 {h, w, std::vector<double>(samples[idx[b]].mask.begin(), samples[idx[b]].mask.end())}};
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

inline MetricReport evaluate(Model& model, const std::vector<SegSample>& samples) {
  if (samples.empty()) throw DataError("no samples to evaluate");
  return metrics::evaluate(predict_pairs(model, samples));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0, loss_transformer = 0, loss_cnn = 0, loss_fused = 0;
  double val_mdice = 0, val_miou = 0;
  double seconds = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_mdice = -1.0;

  double total_seconds() const {
    double s = 0;
    for (const auto& e : epochs) s += e.seconds;
    return s;
  }

  /// Equality ignoring wall time.
  bool same_trajectory(const TrainLog& o) const {
    if (epochs.size() != o.epochs.size() || best_epoch != o.best_epoch) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      auto a = epochs[i], b = o.epochs[i];
      a.seconds = b.seconds = 0;
      if (!(a == b)) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
      rows.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"loss_transformer", e.loss_transformer},
                      {"loss_cnn", e.loss_cnn},
                      {"loss_fused", e.loss_fused},
                      {"val_mdice", e.val_mdice},
                      {"val_miou", e.val_miou},
                      {"seconds", e.seconds}});
    }
    return {{"epochs", rows}, {"best_epoch", best_epoch}, {"best_mdice", best_mdice}};
  }
};

struct TrainOptions {
  std::ostream* progress = nullptr;
  bool save_checkpoint = true;
};

struct TrainResult {
  TrainLog log;
  Model model;  // weights after the last epoch
};

inline std::string sidecar_path(const std::string& checkpoint) { return checkpoint + ".config.json"; }

inline void save_model(const std::string& path, Model& model, const RunConfig& cfg) {
  checkpoint::write_file(path, checkpoint::snapshot(model.store()));
  save_run_config(sidecar_path(path), cfg);
}

struct LoadedModel {
  RunConfig config;
  Model model;
};

/// Rebuilds the model described by the checkpoint's config sidecar and restores its
/// weights.
inline LoadedModel load_model(const std::string& path) {
  auto cfg = load_run_config(sidecar_path(path));
  Model model(cfg.model());
  checkpoint::restore(model.store(), checkpoint::read_file(path));
  return {std::move(cfg), std::move(model)};
}

namespace detail {

/// Name of the first parameter with a NaN/Inf gradient, or empty.
inline std::string first_nonfinite_gradient(nn::ParameterStore<float>& store) {
  for (const auto& e : store.entries()) {
    if (!e.trainable || !e.tensor.has_grad()) continue;
    for (float g : std::as_const(e.tensor).grad()) {
      if (!std::isfinite(g)) return e.name;
    }
  }
  return {};
}

}  // namespace detail

struct Optimizer {
  std::vector<Tensor<float>> params;
  AdamState<float> state;
  AdamOptions options;
};

/// One pass over `samples` in the given order: forward, loss, backward, Adam step per
/// batch. Returns the mean loss terms; val metrics and timing are left to the caller.
inline EpochRecord run_epoch(Model& model, Optimizer& opt, const std::vector<SegSample>& samples,
                             const std::vector<std::size_t>& order, std::size_t batch_size, const LossConfig& loss) {
  EpochRecord rec;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    // batch norm cannot train on one sample
    if (end - start < 2) continue;
    const auto batch = make_batch(samples, {order.begin() + start, order.begin() + end});
    model.store().zero_grad();
    const auto out = model.forward(batch.images, true);
    const auto terms = total_loss(out.s_t(), out.s_r(), out.s_z(), batch.masks, loss);
    if (!std::isfinite(terms.total.item())) {
      const auto op = Tape<float>::record(terms.total).first_nonfinite_op();
      throw NumericalError(op, "non-finite loss; first bad op: " + (op.empty() ? std::string("unknown") : op));
    }
    backward(terms.total);
    if (const auto param = detail::first_nonfinite_gradient(model.store()); !param.empty()) {
      // relu maps NaN to 0, so a bad forward value can hide behind a finite loss
      const auto op = Tape<float>::record(terms.total).first_nonfinite_op();
      throw NumericalError(op.empty() ? "backward" : op, "non-finite gradient for '" + param + "'; first bad op: " +
                                                           (op.empty() ? std::string("backward") : op));
    }
    adam_step(std::span(opt.params), opt.state, opt.options);
    rec.loss += terms.total.item();
    rec.loss_transformer += terms.transformer;
    rec.loss_cnn += terms.cnn;
    rec.loss_fused += terms.fused;
    ++steps;
  }
  if (steps == 0) throw DataError("training split too small for batch norm (need at least 2 samples)");
  const double k = static_cast<double>(steps);
  rec.loss /= k;
  rec.loss_transformer /= k;
  rec.loss_cnn /= k;
  rec.loss_fused /= k;
  return rec;
}

/// Adam on the weighted three-prediction loss, validating after every epoch. The
/// checkpoint on disk always holds the best validation mDice seen so far.
inline TrainResult train(const RunConfig& cfg, const DataSplits& data, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw DataError("training needs non-empty train and val splits");
  TrainResult result{{}, Model(cfg.model())};
  Model& model = result.model;
  Optimizer optimizer{model.store().parameters(), {}, AdamOptions{cfg.lr}};
  std::mt19937_64 order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    try {
      rec = run_epoch(model, optimizer, data.train, order, cfg.batch_size, cfg.loss);
    } catch (const NumericalError& e) {
      throw NumericalError(e.op(), "epoch " + std::to_string(epoch) + ": " + e.what());
    }
    rec.epoch = epoch;
    const auto pairs = predict_pairs(model, data.val);
    rec.val_mdice = metrics::mdice(pairs);
    rec.val_miou = metrics::miou(pairs);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.val_mdice > result.log.best_mdice) {
      result.log.best_mdice = rec.val_mdice;
      result.log.best_epoch = epoch;
      if (opt.save_checkpoint) save_model(cfg.checkpoint, model, cfg);
    }
    result.log.epochs.push_back(rec);
    if (opt.progress) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  loss %.4f (t %.4f r %.4f z %.4f)  val mDice %.4f mIoU %.4f  %.1fs\n",
                    epoch, rec.loss, rec.loss_transformer, rec.loss_cnn, rec.loss_fused, rec.val_mdice, rec.val_miou,
                    rec.seconds);
      *opt.progress << line << std::flush;
    }
  }
  return result;
}

// ---------------------------------------------------------------- benchmark

struct BenchResult {
  std::string preset;
  std::size_t width = 0, height = 0, frames = 0, warmup = 0;
  double mean_fps = 0, p50_fps = 0;
  double mean_ms = 0, p50_ms = 0;

  std::string summary() const {
    char buf[200];
    std::snprintf(buf, sizeof buf, "preset=%s res=%zux%zu frames=%zu warmup=%zu mean_fps=%.2f p50_fps=%.2f mean_ms=%.3f p50_ms=%.3f",
                  preset.c_str(), width, height, frames, warmup, mean_fps, p50_fps, mean_ms, p50_ms);
    return buf;
  }
};

/// Times `frames` single-image eval-mode forwards of one still frame after `warmup`
/// untimed passes.
inline BenchResult bench_fps(Model& model, std::size_t frames, const std::string& preset, std::size_t warmup = 5) {
  if (frames == 0) throw ConfigError("bench needs at least one frame");
  const auto& mc = model.config();
  std::mt19937_64 rng(7);
  const auto still = synth_sample(rng, {mc.width, mc.height});
  const Tensor<float> frame({1, 3, mc.height, mc.width}, to_planar(still.image));
  for (std::size_t i = 0; i < warmup; ++i) (void)model.forward(frame, false);
  std::vector<double> seconds(frames);
  for (auto& s : seconds) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.forward(frame, false);
    s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  BenchResult r{preset, mc.width, mc.height, frames, warmup};
  const double total = std::accumulate(seconds.begin(), seconds.end(), 0.0);
  std::sort(seconds.begin(), seconds.end());
  const double median = frames % 2 ? seconds[frames / 2] : 0.5 * (seconds[frames / 2 - 1] + seconds[frames / 2]);
  r.mean_ms = 1e3 * total / static_cast<double>(frames);
  r.p50_ms = 1e3 * median;
  r.mean_fps = static_cast<double>(frames) / total;
  r.p50_fps = 1.0 / median;
  return r;
}

inline std::string table_header() { return "| Model | Epoch | LR | Time | FPS | mDice |\n|---|---|---|---|---|---|"; }

inline std::string table_row(const std::string& model, std::size_t epochs, double lr, double seconds, double fps,
                             double mdice) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "| %s | %zu | %.0e | %.1f min | %.1f | %.3f |", model.c_str(), epochs, lr,
                seconds / 60.0, fps, mdice);
  return buf;
}

inline std::string model_label(const RunConfig& c) {
  std::string s = "MugenNet-" + c.preset;
  if (!c.ablation.transformer_branch) s += "-noTB";
  if (!c.ablation.cnn_branch) s += "-noCB";
  if (!c.ablation.mugen_module) s += "-noMM";
  return s;
}

// ---------------------------------------------------------------- prediction

struct PredictResult {
  std::size_t width = 0, height = 0;
  bool resized = false;  // input did not match the model resolution
};

/// Writes S_z * 255 as an 8-bit gray PNG at the input image's size, and optionally the
/// mask binarized at 0.5.
inline PredictResult predict(Model& model, const fs::path& image_file, const fs::path& out_file,
                             const fs::path& binary_file = {}) {
  const auto img = read_png(image_file, 3);
  const auto& mc = model.config();
  PredictResult r{img.width, img.height, img.width != mc.width || img.height != mc.height};
  const auto resized = resize_bilinear(img, mc.width, mc.height);
  const auto out = model.forward(Tensor<float>({1, 3, mc.height, mc.width}, to_planar(resized)), false);
  const auto prob = out.s_z().values();
  Image8 gray{mc.width, mc.height, 1, std::vector<std::uint8_t>(prob.size())};
  for (std::size_t i = 0; i < prob.size(); ++i) {
    gray.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(prob[i]), 0.0, 1.0) * 255.0));
  }
  gray = resize_bilinear(gray, img.width, img.height);
  write_png(out_file, gray);
  if (!binary_file.empty()) {
    Image8 bin = gray;
    for (auto& v : bin.pixels) v = v >= 128 ? 255 : 0;
    write_png(binary_file, bin);
  }
  return r;
}

}  // namespace mugen
