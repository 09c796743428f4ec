// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "gle/error.hpp"
#include "gle/eval.hpp"
#include "gle/gle.hpp"
#include "gle/gradcheck_suite.hpp"
#include "gle/ops.hpp"
#include "gle/tensor_io.hpp"
#include "gle/train.hpp"
#include "oracles.hpp"

using namespace gle;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<Sample> synthetic_samples(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (const auto& it : generate_synthetic_dataset(n, size, seed, {})) {
    out.push_back(make_sample(it.image, it.annotation, size, default_sigma(size), CropMode::full_image));
  }
  return out;
}

Tensor eval_op(const std::function<Var(Tape&)>& f) {
  Tape t(false);
  return f(t).value();
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteOptions opts;
  opts.eps = 1e-5;
  const auto entries = run_gradient_suite(opts);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::set<std::string> names;
  for (const auto& e : entries) {
    names.insert(e.name);
    if (e.result.max_relative_error >= worst) {
      worst = e.result.max_relative_error;
      worst_name = e.name;
    }
  }
  const bool composites = names.contains("gle_module") && names.contains("toy_network");
  return {worst <= 1e-4 && elapsed < 120.0 && composites,
          std::to_string(entries.size()) + " checks, max rel err " + fmt("%.3e", worst) + " (" + worst_name +
              "), " + fmt("%.1f", elapsed) + " s"};
}

// ---- 2 ---------------------------------------------------------------------

Tensor permute_positions(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t plane = x.dim(2) * x.dim(3), rows = x.dim(0) * x.dim(1);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < plane; ++p) y[r * plane + perm[p]] = x[r * plane + p];
  return y;
}

Outcome nonlocal_invariants() {
  std::mt19937_64 rng(2);
  NonLocalBlock b = NonLocalBlock::create("nl", 8, 3);
  auto randomize = [&](Parameter& p, double scale) { p.value = oracle::random_tensor(p.value.shape(), rng, -scale, scale); };

  bool identity = true;
  for (int c = 0; c < 50; ++c) {
    randomize(b.theta.weight, 2.0);
    randomize(b.phi.weight, 2.0);
    randomize(b.g.weight, 2.0);
    const Tensor x = oracle::random_tensor({2, 8, 5, 4}, rng, -3.0, 3.0);
    Tape tape(false);
    identity = identity && b.forward(tape, tape.constant(x)).value().identical(x);
  }

  double row_err = 0.0, perm_err = 0.0;
  for (int c = 0; c < 200; ++c) {
    for (Conv2dLayer* l : {&b.theta, &b.phi, &b.g, &b.w}) randomize(l->weight, 1.0);
    randomize(*b.w.bias, 1.0);
    const Tensor x = oracle::random_tensor({1, 8, 4, 5}, rng, -2.0, 2.0);
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape tape(false);
    const auto out = b.forward_detailed(tape, tape.constant(x));
    const Tensor& a = out.affinity.value();
    for (std::size_t r = 0; r < 20; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 20; ++j) s += a[r * 20 + j];
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
    const Tensor lhs = b.forward(tape, tape.constant(permute_positions(x, perm))).value();
    perm_err = std::max(perm_err, max_abs_diff(lhs, permute_positions(out.output.value(), perm)));
  }
  return {row_err <= 1e-9 && perm_err <= 1e-10 && identity,
          "row-sum err " + fmt("%.2e", row_err) + ", permutation err " + fmt("%.2e", perm_err) +
              " over 200 inputs, zero-w identity " + (identity ? "bitwise" : "BROKEN")};
}

// ---- 3 ---------------------------------------------------------------------

Outcome kernel_oracles() {
  std::mt19937_64 rng(3);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  double conv = 0.0, deconv = 0.0, mm = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = pick(1, 3), cin = pick(1, 5), cout = pick(1, 5), k = pick(1, 5);
    const std::size_t stride = pick(1, 3), pad = pick(0, (k - 1) / 2 + 1);
    const std::size_t h = pick(k, 12), w = pick(k, 12);
    const Tensor x = oracle::random_tensor({n, cin, h, w}, rng), wt = oracle::random_tensor({cout, cin, k, k}, rng);
    const Tensor b = oracle::random_tensor({cout}, rng);
    conv = std::max(conv, max_abs_diff(eval_op([&](Tape& t) {
                                         return ops::conv2d(t.constant(x), t.constant(wt), t.constant(b), stride, pad);
                                       }),
                                       oracle::conv2d(x, wt, b, stride, pad)));

    const std::size_t dk = pick(1, 5), dpad = pick(0, (dk - 1) / 2);
    const Tensor dx = oracle::random_tensor({n, cin, pick(1, 8), pick(1, 8)}, rng);
    const Tensor dw = oracle::random_tensor({cin, cout, dk, dk}, rng), db = oracle::random_tensor({cout}, rng);
    deconv = std::max(deconv, max_abs_diff(eval_op([&](Tape& t) {
                                             return ops::conv_transpose2d(t.constant(dx), t.constant(dw),
                                                                          t.constant(db), stride, dpad);
                                           }),
                                           oracle::conv_transpose2d(dx, dw, db, stride, dpad)));

    const Tensor a = oracle::random_tensor({pick(1, 3), pick(1, 9), pick(1, 9)}, rng);
    const Tensor bm = oracle::random_tensor({a.dim(0), a.dim(2), pick(1, 9)}, rng);
    mm = std::max(mm, max_abs_diff(eval_op([&](Tape& t) { return ops::matmul_batched(t.constant(a), t.constant(bm)); }),
                                   oracle::matmul_batched(a, bm)));
  }
  return {conv <= 1e-12 && deconv <= 1e-12 && mm <= 1e-12,
          "100 cases each: conv2d " + fmt("%.2e", conv) + ", conv_transpose2d " + fmt("%.2e", deconv) +
              ", matmul_batched " + fmt("%.2e", mm)};
}

// ---- 4 ---------------------------------------------------------------------

Outcome shape_contract() {
  NetworkConfig c;
  c.input_size = 224;
  c.width_multiplier = 1.0 / 16.0;
  LandmarkNet net = LandmarkNet::build(c, 0);
  const auto sizes = net.decoder_sizes();
  bool stages = net.decoder().size() == 3;
  for (const auto& d : net.decoder()) {
    stages = stages && d.weight.value.dim(2) == 4 && d.weight.value.dim(3) == 4 && d.stride == 2 && d.padding == 1;
  }
  std::mt19937_64 rng(4);
  const Tensor out = net.infer(oracle::random_tensor({2, 3, 224, 224}, rng, 0.0, 1.0));
  const bool ok = sizes == std::vector<std::size_t>{28, 56, 112, 224} && stages &&
                  out.shape() == Shape{2, 8, 224, 224};
  std::string path;
  for (auto s : sizes) path += (path.empty() ? "" : "->") + std::to_string(s);
  return {ok, "decoder " + path + " (k4 s2 p1), output " + shape_string(out.shape())};
}

// ---- 5 ---------------------------------------------------------------------

Outcome desk_scale_learning(const std::string& loss_dump) {
  const std::size_t size = 64;
  const auto train = synthetic_samples(256, size, 1);
  const auto held_out = synthetic_samples(64, size, 2);
  NetworkConfig nc;
  nc.input_size = size;
  nc.width_multiplier = 1.0 / 8.0;
  nc.k = 2;
  OptimizerConfig oc;
  oc.learning_rate = 1e-3;
  oc.batch_size = 8;
  oc.epochs = 20;

  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(nc, oc);
  std::vector<double> losses;
  trainer.run(train, 0, [&](std::uint64_t, double loss) { losses.push_back(loss); });
  const double elapsed = seconds_since(t0);

  EvalOptions eo;
  const double train_ne = *evaluate(trainer.net(), train, eo).average;
  const double held_ne = *evaluate(trainer.net(), held_out, eo).average;

  // sliding 50-step mean
  constexpr std::size_t window = 50;
  std::size_t rises = 0;
  double worst_rise = 0.0, prev = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    acc += losses[i];
    if (i >= window) acc -= losses[i - window];
    if (i + 1 < window) continue;
    const double ma = acc / window;
    if (i + 1 > window && ma > prev) {
      ++rises;
      worst_rise = std::max(worst_rise, ma - prev);
    }
    prev = ma;
  }
  if (!loss_dump.empty()) {
    std::ofstream f(loss_dump);
    for (std::size_t i = 0; i < losses.size(); ++i) f << i + 1 << ' ' << format_double(losses[i]) << '\n';
  }
  const bool ok = train_ne < 0.02 && held_ne < 0.06 && elapsed <= 900.0 && rises == 0;
  return {ok, "train NE " + fmt("%.4f", train_ne) + ", held-out NE " + fmt("%.4f", held_ne) + ", " +
                  std::to_string(losses.size()) + " steps in " + fmt("%.0f", elapsed) + " s, moving-average rises " +
                  std::to_string(rises) + (rises ? " (largest " + fmt("%.2e", worst_rise) + ")" : "")};
}

// ---- 6 ---------------------------------------------------------------------

Outcome k_ablation(std::string& record) {
  const std::size_t size = 64;
  const auto train = synthetic_samples(64, size, 11);
  const auto held_out = synthetic_samples(32, size, 12);
  std::array<double, 2> mean{};
  std::array<std::set<std::string>, 2> names;
  for (std::size_t k = 1; k <= 2; ++k) {
    ExactSum sum;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      NetworkConfig nc;
      nc.input_size = size;
      nc.width_multiplier = 1.0 / 8.0;
      nc.k = k;
      OptimizerConfig oc;
      oc.batch_size = 8;
      oc.epochs = 4;
      oc.seed = seed;
      Trainer t(nc, oc);
      t.run(train, 0);
      sum.add(*evaluate(t.net(), held_out, {}).average);
      if (seed == 0) {
        for (const auto& [name, tensor] : t.net().named_tensors()) names[k - 1].insert(name);
      }
    }
    mean[k - 1] = sum.value() / 5.0;
  }
  std::vector<std::string> extra;
  std::set_difference(names[1].begin(), names[1].end(), names[0].begin(), names[0].end(), std::back_inserter(extra));
  bool one_module = !extra.empty() && std::includes(names[1].begin(), names[1].end(), names[0].begin(), names[0].end());
  for (const auto& n : extra) one_module = one_module && n.rfind("gle.1.", 0) == 0;

  record = "k1_mean_heldout_ne = " + format_double(mean[0]) + "\nk2_mean_heldout_ne = " + format_double(mean[1]) + "\n";
  return {mean[0] != mean[1] && one_module,
          "5 seeds: k=1 mean held-out NE " + fmt("%.4f", mean[0]) + ", k=2 " + fmt("%.4f", mean[1]) + "; k=2 adds " +
              std::to_string(extra.size()) + " tensors, all under gle.1"};
}

// ---- 7 ---------------------------------------------------------------------

Outcome metric_correctness() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-100.0, 400.0), side(1.0, 500.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Point p{coord(rng), coord(rng)}, g{coord(rng), coord(rng)};
    const double w = side(rng), h = side(rng);
    const long double dx = (static_cast<long double>(p.x) - g.x) / w, dy = (static_cast<long double>(p.y) - g.y) / h;
    const double want = static_cast<double>(std::sqrt(dx * dx + dy * dy));
    worst = std::max(worst, std::abs(normalized_error(p, g, w, h) - want) / std::max(want, 1e-300));
  }
  double px = 0.0;
  std::size_t checked = 0;
  for (const auto& s : synthetic_samples(200, 64, 70)) {
    Tensor batch({1, 8, 64, 64});
    std::copy(s.target.maps.ptr(), s.target.maps.ptr() + s.target.maps.numel(), batch.mutable_ptr());
    const auto c = decode_heatmaps(batch).front();
    for (std::size_t k = 0; k < kNumLandmarks; ++k) {
      if (!s.mask[k]) continue;
      px = std::max({px, std::abs(c[k].x - s.gt_coords[k].x), std::abs(c[k].y - s.gt_coords[k].y)});
      ++checked;
    }
  }
  return {worst <= 1e-12 && px <= 0.5,
          "NE rel err " + fmt("%.2e", worst) + " on 10000 cases; render->decode max " + fmt("%.3f", px) + " px over " +
              std::to_string(checked) + " landmarks"};
}

// ---- 8 ---------------------------------------------------------------------

std::string run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  if (cli::run(args, out, err) != 0) fail(ErrorKind::precondition, "command failed: " + err.str());
  return out.str();
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "gle_acceptance_repro";
  fs::remove_all(root);
  auto dir = [&](const std::string& name) { return (root / name).string(); };
  bool same_data = true, same_ckpt = true, same_report = true;
  for (const char* rep : {"a", "b"}) {
    run_cli({"gen-data", "--n", "24", "--size", "64", "--seed", "5", "--out", dir(std::string("data_") + rep)});
  }
  same_data = read_file(dir("data_a") + "/annotations.txt") == read_file(dir("data_b") + "/annotations.txt");
  const std::vector<std::string> train = {"--size", "32", "--width-multiplier", "0.0625", "--k", "2",
                                          "--epochs", "3", "--batch-size", "4", "--seed", "9", "--checkpoint-every", "4"};
  for (const char* rep : {"a", "b"}) {
    auto args = std::vector<std::string>{"train", "--data", dir("data_a"), "--out", dir(std::string("run_") + rep)};
    args.insert(args.end(), train.begin(), train.end());
    run_cli(args);
    run_cli({"eval", "--checkpoint", dir(std::string("run_") + rep) + "/checkpoint.bin", "--data", dir("data_a"),
             "--out", dir(std::string("eval_") + rep)});
  }
  same_ckpt = read_file(dir("run_a") + "/checkpoint.bin") == read_file(dir("run_b") + "/checkpoint.bin") &&
              read_file(dir("run_a") + "/loss.log") == read_file(dir("run_b") + "/loss.log");
  same_report = read_file(dir("eval_a") + "/report.txt") == read_file(dir("eval_b") + "/report.txt");

  auto first = std::vector<std::string>{"train", "--data", dir("data_a"), "--out", dir("run_resumed")};
  first.insert(first.end(), train.begin(), train.end());
  first.insert(first.end(), {"--max-steps", "7"});
  run_cli(first);
  run_cli({"train", "--resume", dir("run_resumed") + "/checkpoint.bin", "--data", dir("data_a"), "--out",
           dir("run_resumed"), "--checkpoint-every", "4"});
  const bool resume = read_file(dir("run_resumed") + "/checkpoint.bin") == read_file(dir("run_a") + "/checkpoint.bin") &&
                      read_file(dir("run_resumed") + "/loss.log") == read_file(dir("run_a") + "/loss.log");
  fs::remove_all(root);
  const auto yes = [](bool b) { return b ? "identical" : "DIFFERENT"; };
  return {same_data && same_ckpt && same_report && resume,
          std::string("data ") + yes(same_data) + ", checkpoints+loss logs " + yes(same_ckpt) + ", eval reports " +
              yes(same_report) + ", resume at step 7 of 18 " + yes(resume)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string loss_dump, report_path = "acceptance_report.txt";
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 8));
  app.add_option("--losses", loss_dump, "write the criterion 5 loss curve here");
  app.add_option("--report", report_path, "key = value summary file");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8};

  std::string k_record;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"non-local invariants", nonlocal_invariants},
      {"kernel oracles", kernel_oracles},
      {"shape contract", shape_contract},
      {"desk-scale learning", [&] { return desk_scale_learning(loss_dump); }},
      {"k ablation", [&] { return k_ablation(k_record); }},
      {"metric correctness", metric_correctness},
      {"reproducibility", reproducibility},
  };
  std::ostringstream report;
  int failures = 0;
  for (int id : only) {
    const auto& [name, check] = criteria[static_cast<std::size_t>(id - 1)];
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %-22s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    report << "criterion_" << id << " = " << (o.pass ? "pass" : "fail") << "  # " << o.detail << '\n';
  }
  report << k_record;
  std::ofstream(report_path) << report.str();
  return failures == 0 ? 0 : 1;
}
