// SPDX-License-Identifier: Apache-2.0
#include "gle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gle/error.hpp"
#include "gle/keyvalue.hpp"

namespace gle {

std::vector<LandmarkCoords> decode_heatmaps(const Tensor& heatmaps) {
  if (heatmaps.rank() != 4 || heatmaps.dim(1) != kNumLandmarks) {
    fail(ErrorKind::shape, "decode_heatmaps: expected [N,8,S,S], got " + shape_string(heatmaps.shape()));
  }
  const std::size_t n = heatmaps.dim(0), h = heatmaps.dim(2), w = heatmaps.dim(3);
  std::vector<LandmarkCoords> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < kNumLandmarks; ++c) {
      const double* plane = heatmaps.ptr() + (b * kNumLandmarks + c) * h * w;
      std::size_t best = 0;
      for (std::size_t i = 1; i < h * w; ++i) {
        if (plane[i] > plane[best]) best = i;
      }
      out[b][c] = {static_cast<double>(best % w), static_cast<double>(best / w)};
    }
  }
  return out;
}

double normalized_error(Point pred, Point gt, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) fail(ErrorKind::precondition, "normalized_error: width and height must be positive");
  const double dx = (pred.x - gt.x) / width;
  const double dy = (pred.y - gt.y) / height;
  return std::sqrt(dx * dx + dy * dy);
}

double normalized_error_area(Point pred, Point gt, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) fail(ErrorKind::precondition, "normalized_error: width and height must be positive");
  const double dx = pred.x - gt.x, dy = pred.y - gt.y;
  return std::sqrt(dx * dx + dy * dy) / (width * height);
}

std::string_view to_string(NeNormalization n) {
  return n == NeNormalization::area ? "area" : "per_axis";
}

void ExactSum::add(double x) {
  std::size_t i = 0;
  for (double y : partials_) {
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[i++] = lo;
    x = hi;
  }
  partials_.resize(i);
  partials_.push_back(x);
}

double ExactSum::value() const {
  // Round-half-even correction as in msum/fsum.
  if (partials_.empty()) return 0.0;
  std::size_t n = partials_.size();
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "dataset: " << dataset_id << "  samples: " << num_samples
     << "  normalization: " << to_string(normalization) << "  config: " << config_hash << '\n';
  auto cell = [&](const std::string& s, std::size_t width) {
    os << std::string(width > s.size() ? width - s.size() : 0, ' ') << s;
  };
  cell("", 6);
  for (auto name : kSlotNames) cell(std::string(name), 13);
  cell("Avg.", 10);
  os << '\n';
  cell("NE", 6);
  for (const auto& v : slot_ne) cell(v ? fixed4(*v) : "-", 13);
  cell(average ? fixed4(*average) : "-", 10);
  os << '\n';
  cell("n", 6);
  std::size_t total = 0;
  for (auto c : counts) {
    cell(std::to_string(c), 13);
    total += c;
  }
  cell(std::to_string(total), 10);
  os << '\n';
  return os.str();
}

std::string EvalReport::key_values() const {
  KeyValues kv;
  kv.set("dataset", dataset_id);
  kv.set("config_hash", config_hash);
  kv.set("normalization", std::string(to_string(normalization)));
  kv.set("samples", std::to_string(num_samples));
  std::size_t total = 0;
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    const std::string name(kSlotNames[i]);
    kv.set("ne." + name, slot_ne[i] ? format_double(*slot_ne[i]) : "-");
    kv.set("count." + name, std::to_string(counts[i]));
    total += counts[i];
  }
  kv.set("ne.Avg", average ? format_double(*average) : "-");
  kv.set("count.total", std::to_string(total));
  return kv.to_string();
}

EvalReport aggregate_errors(std::span<const LandmarkCoords> predictions,
                            std::span<const Sample> samples, NeNormalization normalization) {
  if (predictions.size() != samples.size()) {
    fail(ErrorKind::precondition, "aggregate_errors: prediction and sample counts differ");
  }
  EvalReport r;
  r.normalization = normalization;
  r.num_samples = samples.size();
  std::array<ExactSum, kNumLandmarks> sums;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Sample& sample = samples[s];
    const double h = static_cast<double>(sample.image.dim(1));
    const double w = static_cast<double>(sample.image.dim(2));
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
      if (!sample.mask[i]) continue;
      const double e = normalization == NeNormalization::area
                           ? normalized_error_area(predictions[s][i], sample.gt_coords[i], w, h)
                           : normalized_error(predictions[s][i], sample.gt_coords[i], w, h);
      sums[i].add(e);
      ++r.counts[i];
    }
  }
  ExactSum weighted;
  std::size_t total = 0;
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    if (r.counts[i] == 0) continue;
    r.slot_ne[i] = sums[i].value() / static_cast<double>(r.counts[i]);
    weighted.add(*r.slot_ne[i] * static_cast<double>(r.counts[i]));
    total += r.counts[i];
  }
  if (total > 0) r.average = weighted.value() / static_cast<double>(total);
  return r;
}

Tensor stack_images(std::span<const Sample* const> samples) {
  if (samples.empty()) fail(ErrorKind::precondition, "stack_images: empty batch");
  const Shape& s = samples.front()->image.shape();
  const std::size_t per = samples.front()->image.numel();
  Tensor out({samples.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->image.shape() != s) fail(ErrorKind::shape, "stack_images: mixed image shapes in batch");
    std::copy(samples[i]->image.ptr(), samples[i]->image.ptr() + per, out.mutable_ptr() + i * per);
  }
  return out;
}

std::vector<LandmarkCoords> predict_coordinates(LandmarkNet& net, std::span<const Sample> samples,
                                                std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorKind::precondition, "batch size must be positive");
  std::vector<LandmarkCoords> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const auto coords = decode_heatmaps(net.infer(stack_images(batch)));
    out.insert(out.end(), coords.begin(), coords.end());
  }
  return out;
}

EvalReport evaluate(LandmarkNet& net, std::span<const Sample> samples, const EvalOptions& options) {
  if (samples.empty()) fail(ErrorKind::precondition, "evaluate: dataset is empty");
  const auto predictions = predict_coordinates(net, samples, options.batch_size);
  EvalReport r = aggregate_errors(predictions, samples, options.normalization);
  r.dataset_id = options.dataset_id;
  r.config_hash = config_hash(net.config());
  return r;
}

std::string config_hash(const NetworkConfig& config) {
  KeyValues kv;
  config.store(kv);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(kv.to_string())));
  return buf;
}

}  // namespace gle
