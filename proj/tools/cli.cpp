// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "gle/error.hpp"
#include "gle/eval.hpp"
#include "gle/gradcheck_suite.hpp"
#include "gle/tensor_io.hpp"

namespace gle::cli {

namespace fs = std::filesystem;

RunConfig RunConfig::resolve(const KeyValues& merged) {
  RunConfig c;
  c.network = NetworkConfig::from(merged);
  c.network.validate();
  c.optimizer = OptimizerConfig::from(merged);
  c.optimizer.validate();
  c.data_path = merged.get_or("data.path", "");
  c.sigma = merged.get_double("data.sigma", default_sigma(c.network.input_size));
  if (!(c.sigma > 0.0)) fail(ErrorKind::config, "data.sigma must be positive");
  c.crop = parse_crop_mode(merged.get_or("data.crop", std::string(to_string(CropMode::full_image))));
  c.out_dir = merged.get_or("run.out", "");
  const auto every = merged.get_int("run.checkpoint_every", static_cast<std::int64_t>(c.checkpoint_every));
  const auto max_steps = merged.get_int("run.max_steps", 0);
  if (every < 0 || max_steps < 0) fail(ErrorKind::config, "run.checkpoint_every and run.max_steps must be non-negative");
  c.checkpoint_every = static_cast<std::size_t>(every);
  c.max_steps = static_cast<std::size_t>(max_steps);
  return c;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  network.store(kv);
  optimizer.store(kv);
  kv.set("data.path", data_path);
  kv.set("data.sigma", format_double(sigma));
  kv.set("data.crop", std::string(to_string(crop)));
  kv.set("run.out", out_dir);
  kv.set("run.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("run.max_steps", std::to_string(max_steps));
  return kv;
}

RgbImage draw_overlay(const RgbImage& image, const LandmarkCoords& coords, const LandmarkMask& mask) {
  RgbImage out = image;
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    if (!mask[k]) continue;
    const auto& color = is_left_slot(k) ? kLeftColor : kRightColor;
    const long cx = std::lround(coords[k].x), cy = std::lround(coords[k].y);
    for (long y = cy - 2; y <= cy + 2; ++y) {
      for (long x = cx - 2; x <= cx + 2; ++x) {
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        std::copy(color.begin(), color.end(), out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));
      }
    }
  }
  return out;
}

namespace {

class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    slots_.push_back({key, {}, nullptr});
    slots_.back().option = app->add_option(flag, slots_.back().value, help);
  }

  KeyValues values() const {
    KeyValues kv;
    for (const auto& s : slots_) {
      if (s.option->count() > 0) kv.set(s.key, s.value);
    }
    return kv;
  }

 private:
  struct Slot {
    std::string key;
    std::string value;
    CLI::Option* option;
  };
  std::deque<Slot> slots_;
};

void add_model_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--size", "network.input_size", "input image size S");
  o.add(app, "--backbone", "network.backbone", "toy or paper_vgg");
  o.add(app, "--width-multiplier", "network.width_multiplier", "channel width multiplier");
  o.add(app, "--k", "network.k", "GLE stack depth");
}

void add_data_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--data", "data.path", "dataset directory");
  o.add(app, "--sigma", "data.sigma", "target Gaussian sigma in pixels (default S/32)");
  o.add(app, "--crop", "data.crop", "full_image or bbox");
}

KeyValues merged_config(const std::string& config_path, const Overrides& overrides) {
  KeyValues kv = config_path.empty() ? KeyValues{} : KeyValues::load(config_path);
  kv.merge(overrides.values());
  return kv;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, bytes);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot replace " + path + ": " + ec.message());
}

// ---- gen-data ------------------------------------------------------------

struct GenDataArgs {
  std::size_t n = 0;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::vector<double> mix = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double occlusion = 0.0;
  std::string out;
};

void cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const CategoryMix mix{a.mix[0], a.mix[1], a.mix[2]};
  const auto items = generate_synthetic_dataset(a.n, a.size, a.seed, mix, {a.occlusion});
  write_dataset(a.out, items);
  KeyValues kv;
  kv.set("gen.n", std::to_string(a.n));
  kv.set("gen.size", std::to_string(a.size));
  kv.set("gen.seed", std::to_string(a.seed));
  kv.set("gen.mix", format_double(a.mix[0]) + "," + format_double(a.mix[1]) + "," + format_double(a.mix[2]));
  kv.set("gen.occlusion", format_double(a.occlusion));
  write_file(join(a.out, kResolvedConfigName), kv.to_string());

  std::array<std::size_t, 3> counts{};
  for (const auto& it : items) ++counts[static_cast<std::size_t>(it.annotation.category)];
  out << "wrote " << items.size() << " images to " << a.out << ": full_body " << counts[0] << ", upper "
      << counts[1] << ", lower " << counts[2] << '\n';
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string resume;
};

void truncate_loss_log(const std::string& path, std::uint64_t last_step) {
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::uint64_t step = 0;
    if (!(fields >> step)) fail(ErrorKind::format, path + ": malformed loss log line '" + line + "'");
    if (step > last_step) break;
    kept += line + '\n';
  }
  write_file(path, kept);
}

void check_resume_conflicts(const KeyValues& overrides, const KeyValues& from_checkpoint) {
  for (const auto& key : overrides.keys()) {
    if (key.rfind("network.", 0) != 0 && key.rfind("optimizer.", 0) != 0) continue;
    const auto stored = from_checkpoint.get(key);
    if (stored && *stored != *overrides.get(key)) {
      fail(ErrorKind::config, "--resume: setting " + key + " = " + *overrides.get(key) +
                                  " conflicts with the checkpoint value " + *stored);
    }
  }
}

void cmd_train(const TrainArgs& a, const Overrides& overrides, std::ostream& out) {
  KeyValues merged = merged_config(a.config, overrides);
  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer::load_checkpoint(a.resume));
    KeyValues stored;
    trainer->net().config().store(stored);
    trainer->optimizer_config().store(stored);
    check_resume_conflicts(merged, stored);
    merged.merge(stored);
  }
  const RunConfig rc = RunConfig::resolve(merged);
  if (rc.data_path.empty()) fail(ErrorKind::config, "train: no dataset (set data.path or --data)");
  if (rc.out_dir.empty()) fail(ErrorKind::config, "train: no output directory (set run.out or --out)");
  ensure_dir(rc.out_dir);
  write_file(join(rc.out_dir, kResolvedConfigName), rc.to_key_values().to_string());

  const auto samples = prepare_samples(load_dataset(rc.data_path), rc.network.input_size, rc.sigma, rc.crop);
  if (!trainer) trainer.emplace(rc.network, rc.optimizer);

  const std::string log_path = join(rc.out_dir, kLossLogName);
  if (a.resume.empty()) {
    write_file(log_path, "");
  } else {
    truncate_loss_log(log_path, trainer->global_step());
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) fail(ErrorKind::io, "cannot open " + log_path);
  const std::string ckpt = join(rc.out_dir, kCheckpointName);

  ExactSum epoch_loss;
  std::size_t epoch_steps = 0;
  std::uint64_t epoch = trainer->epoch();
  try {
    trainer->run(samples, rc.max_steps, [&](std::uint64_t step, double loss) {
      log << step << ' ' << format_double(loss) << '\n';
      epoch_loss.add(loss);
      ++epoch_steps;
      if (trainer->epoch() != epoch) {
        epoch = trainer->epoch();
        char buf[96];
        std::snprintf(buf, sizeof(buf), "epoch %llu step %llu mean loss %.6g\n",
                      static_cast<unsigned long long>(epoch), static_cast<unsigned long long>(step),
                      epoch_loss.value() / static_cast<double>(epoch_steps));
        out << buf;
        epoch_loss = ExactSum{};
        epoch_steps = 0;
      }
      if (rc.checkpoint_every > 0 && step % rc.checkpoint_every == 0) {
        log.flush();
        write_atomic(ckpt, trainer->serialize_checkpoint());
      }
    });
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::numeric) {
      log.flush();
      write_atomic(ckpt, trainer->serialize_checkpoint());
    }
    throw;
  }
  log.flush();
  write_atomic(ckpt, trainer->serialize_checkpoint());
  trainer->net().export_weights(join(rc.out_dir, kWeightsName));
  out << "trained to step " << trainer->global_step() << " (epoch " << trainer->epoch() << "); checkpoint "
      << ckpt << '\n';
}

// ---- model loading shared by eval and predict ----------------------------

struct ModelArgs {
  std::string checkpoint;
  std::string weights;
  std::string config;
};

LandmarkNet load_model(const ModelArgs& a, const KeyValues& merged) {
  if (a.checkpoint.empty() == a.weights.empty()) {
    fail(ErrorKind::config, "give exactly one of --checkpoint or --weights");
  }
  if (!a.checkpoint.empty()) {
    Trainer t = Trainer::load_checkpoint(a.checkpoint);
    return std::move(t.net());
  }
  LandmarkNet net = LandmarkNet::build(NetworkConfig::from(merged), 0);
  net.import_weights(a.weights);
  return net;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  ModelArgs model;
  std::string out;
  std::string category;
  std::string dataset_id;
  std::size_t batch_size = 16;
  bool area_normalization = false;
};

void cmd_eval(const EvalArgs& a, const Overrides& overrides, std::ostream& out) {
  KeyValues merged = merged_config(a.model.config, overrides);
  LandmarkNet net = load_model(a.model, merged);
  const std::string data = merged.get_or("data.path", "");
  if (data.empty()) fail(ErrorKind::config, "eval: no dataset (set data.path or --data)");
  const CropMode crop = parse_crop_mode(merged.get_or("data.crop", "full_image"));
  const std::size_t size = net.config().input_size;

  Dataset ds = load_dataset(data);
  if (!a.category.empty()) {
    const Category keep = parse_category(a.category);
    Dataset filtered{ds.root, {}, {}};
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
      if (ds.annotations[i].category != keep) continue;
      filtered.images.push_back(ds.images[i]);
      filtered.annotations.push_back(ds.annotations[i]);
    }
    ds = std::move(filtered);
  }
  const auto samples = prepare_samples(ds, size, default_sigma(size), crop);

  EvalOptions opts;
  opts.batch_size = a.batch_size;
  opts.normalization = a.area_normalization ? NeNormalization::area : NeNormalization::per_axis;
  opts.dataset_id = a.dataset_id.empty() ? data : a.dataset_id;
  if (!a.category.empty()) opts.dataset_id += " [" + a.category + "]";
  EvalReport report;
  if (samples.empty()) {
    report = aggregate_errors({}, {}, opts.normalization);
    report.dataset_id = opts.dataset_id;
    report.config_hash = config_hash(net.config());
  } else {
    report = evaluate(net, samples, opts);
  }
  out << report.table();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    KeyValues echo = merged;
    net.config().store(echo);
    echo.set("eval.normalization", std::string(to_string(opts.normalization)));
    echo.set("eval.category", a.category.empty() ? "all" : a.category);
    echo.set("eval.batch_size", std::to_string(a.batch_size));
    write_file(join(a.out, kResolvedConfigName), echo.to_string());
    write_file(join(a.out, "report.txt"), report.key_values());
    write_file(join(a.out, "report_table.txt"), report.table());
  }
}

// ---- predict -------------------------------------------------------------

struct PredictArgs {
  ModelArgs model;
  std::string input;
  std::string out;
  std::string category = "full_body";
  bool dump_heatmaps = false;
};

std::string coordinate_text(const LandmarkCoords& coords, const LandmarkMask& mask) {
  std::string s;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    s += std::string(kSlotNames[k]);
    s += mask[k] ? " " + format_double(coords[k].x) + " " + format_double(coords[k].y) : " -";
    s += '\n';
  }
  return s;
}

void predict_one(LandmarkNet& net, const std::string& id, const RgbImage& image, Category category,
                 const BBox& bbox, const PredictArgs& a) {
  const std::size_t size = net.config().input_size;
  const ResizedImage r = crop_and_resize(image, bbox, size);
  Tensor batch({1, 3, size, size});
  std::copy(r.image.ptr(), r.image.ptr() + r.image.numel(), batch.mutable_ptr());
  const Tensor heatmaps = net.infer(batch);
  const LandmarkCoords resized = decode_heatmaps(heatmaps).front();

  LandmarkCoords coords{};
  LandmarkMask mask{};
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    mask[k] = slot_present(category, k);
    if (mask[k]) coords[k] = r.transform.invert(resized[k]);
  }
  write_file(join(a.out, id + ".txt"), coordinate_text(coords, mask));
  write_ppm(join(a.out, id + "_overlay.ppm"), draw_overlay(image, coords, mask));
  if (a.dump_heatmaps) {
    for (std::size_t k = 0; k < kNumLandmarks; ++k) {
      write_pgm(join(a.out, id + "_heatmap_" + std::string(kSlotNames[k]) + ".pgm"), size, size,
                heatmaps.ptr() + k * size * size);
    }
  }
}

void cmd_predict(const PredictArgs& a, const Overrides& overrides, std::ostream& out) {
  KeyValues merged = merged_config(a.model.config, overrides);
  LandmarkNet net = load_model(a.model, merged);
  const CropMode crop = parse_crop_mode(merged.get_or("data.crop", "full_image"));
  ensure_dir(a.out);
  std::size_t count = 0;
  if (fs::is_directory(a.input)) {
    const Dataset ds = load_dataset(a.input);
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
      const auto& ann = ds.annotations[i];
      const BBox box = crop == CropMode::bbox ? ann.bbox : full_image_bbox(ds.images[i]);
      predict_one(net, ann.image_id, ds.images[i], ann.category, box, a);
      ++count;
    }
  } else {
    const RgbImage image = read_ppm(a.input);
    predict_one(net, fs::path(a.input).stem().string(), image, parse_category(a.category),
                full_image_bbox(image), a);
    ++count;
  }
  out << "predicted " << count << " image" << (count == 1 ? "" : "s") << " into " << a.out << '\n';
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  double eps = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 1;
  std::string only;
  bool inject_sign_error = false;
  bool ops_only = false;
};

void cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.eps > 0.0) || !(a.tol > 0.0)) fail(ErrorKind::config, "--eps and --tol must be positive");
  out << "gradcheck eps = " << format_double(a.eps) << " tol = " << format_double(a.tol) << '\n';
  GradSuiteOptions opts;
  opts.eps = a.eps;
  opts.seed = a.seed;
  opts.only = a.only;
  opts.inject_sign_error = a.inject_sign_error;
  opts.include_composites = !a.ops_only;
  const auto entries = run_gradient_suite(opts);
  if (entries.empty()) fail(ErrorKind::config, "no gradient check named '" + a.only + "'");
  std::size_t failed = 0;
  for (const auto& e : entries) {
    const bool ok = e.result.max_relative_error <= a.tol;
    failed += ok ? 0 : 1;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e  elements %8zu  %s\n", e.name.c_str(),
                  e.result.max_relative_error, e.result.elements_checked, ok ? "ok" : "FAIL");
    out << buf;
  }
  if (failed > 0) {
    fail(ErrorKind::numeric, std::to_string(failed) + " gradient check(s) exceed tol " + format_double(a.tol));
  }
  out << "all " << entries.size() << " gradient checks within tolerance\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GLE landmark detection: data generation, training, evaluation and prediction", "gle"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gle 1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset (PPM images + annotations)");
  gen_cmd->add_option("--n", gen.n, "number of images")->required();
  gen_cmd->add_option("--size", gen.size, "image side in pixels")->required();
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--mix", gen.mix, "full_body,upper,lower proportions")->delimiter(',')->expected(3);
  gen_cmd->add_option("--occlusion", gen.occlusion, "probability a present landmark is occluded");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  TrainArgs train;
  Overrides train_over;
  auto* train_cmd = app.add_subcommand("train", "train a network, writing checkpoints and a loss log");
  train_cmd->add_option("--config", train.config, "config file (key = value with [sections])");
  train_cmd->add_option("--resume", train.resume, "continue from a checkpoint");
  add_model_overrides(train_cmd, train_over);
  add_data_overrides(train_cmd, train_over);
  train_over.add(train_cmd, "--out", "run.out", "output directory");
  train_over.add(train_cmd, "--optimizer", "optimizer.kind", "adam or sgd_momentum");
  train_over.add(train_cmd, "--lr", "optimizer.learning_rate", "learning rate");
  train_over.add(train_cmd, "--momentum", "optimizer.momentum", "SGD momentum");
  train_over.add(train_cmd, "--weight-decay", "optimizer.weight_decay", "L2 weight decay");
  train_over.add(train_cmd, "--epochs", "optimizer.epochs", "number of epochs");
  train_over.add(train_cmd, "--batch-size", "optimizer.batch_size", "mini-batch size");
  train_over.add(train_cmd, "--seed", "optimizer.seed", "initialization and shuffling seed");
  train_over.add(train_cmd, "--checkpoint-every", "run.checkpoint_every", "steps between checkpoints (0: end only)");
  train_over.add(train_cmd, "--max-steps", "run.max_steps", "stop after this global step (0: no limit)");

  auto add_model_args = [](CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("--checkpoint", m.checkpoint, "training checkpoint");
    cmd->add_option("--weights", m.weights, "exported weights (network settings come from --config)");
    cmd->add_option("--config", m.config, "config file");
  };

  EvalArgs ev;
  Overrides eval_over;
  auto* eval_cmd = app.add_subcommand("eval", "report per-landmark normalized error");
  add_model_args(eval_cmd, ev.model);
  add_model_overrides(eval_cmd, eval_over);
  add_data_overrides(eval_cmd, eval_over);
  eval_cmd->add_option("--out", ev.out, "directory for report.txt and the resolved config");
  eval_cmd->add_option("--category", ev.category, "only evaluate full_body, upper or lower items");
  eval_cmd->add_option("--dataset-id", ev.dataset_id, "label printed in the report");
  eval_cmd->add_option("--batch-size", ev.batch_size, "inference batch size");
  eval_cmd->add_flag("--area-normalization", ev.area_normalization,
                     "divide pixel distance by width*height instead of per axis");

  PredictArgs pr;
  Overrides predict_over;
  auto* predict_cmd = app.add_subcommand("predict", "write coordinates and overlays for images");
  add_model_args(predict_cmd, pr.model);
  add_model_overrides(predict_cmd, predict_over);
  predict_over.add(predict_cmd, "--crop", "data.crop", "full_image or bbox (dataset input only)");
  predict_cmd->add_option("--input", pr.input, "a PPM image or a dataset directory")->required();
  predict_cmd->add_option("--out", pr.out, "output directory")->required();
  predict_cmd->add_option("--category", pr.category, "garment category of a single PPM input");
  predict_cmd->add_flag("--dump-heatmaps", pr.dump_heatmaps, "also write 8 PGM heatmaps per image");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gc_cmd->add_option("--eps", gc.eps, "central difference step");
  gc_cmd->add_option("--tol", gc.tol, "maximum relative error");
  gc_cmd->add_option("--seed", gc.seed, "seed for the random inputs");
  gc_cmd->add_option("--only", gc.only, "run a single named check");
  gc_cmd->add_flag("--ops-only", gc.ops_only, "skip the composed modules");
  gc_cmd->add_flag("--inject-sign-error", gc.inject_sign_error, "add a deliberately wrong backward (self-test)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) cmd_gen_data(gen, out);
    if (*train_cmd) cmd_train(train, train_over, out);
    if (*eval_cmd) cmd_eval(ev, eval_over, out);
    if (*predict_cmd) cmd_predict(pr, predict_over, out);
    if (*gc_cmd) cmd_gradcheck(gc, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << to_string(e.kind()) << ": " << msg << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace gle::cli
