// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

#include "gle/error.hpp"
#include "gle/train.hpp"
#include "oracles.hpp"

using namespace gle;

namespace {

NetworkConfig small_net(std::size_t size = 32) {
  NetworkConfig c;
  c.input_size = size;
  c.backbone = BackboneKind::toy;
  c.width_multiplier = 1.0 / 16.0;
  c.k = 1;
  return c;
}

OptimizerConfig small_opt(std::uint64_t seed = 3) {
  OptimizerConfig o;
  o.seed = seed;
  o.epochs = 100;
  o.batch_size = 2;
  return o;
}

std::vector<Sample> small_samples(std::size_t n, std::size_t size = 32, std::uint64_t seed = 17) {
  std::vector<Sample> out;
  for (const auto& it : generate_synthetic_dataset(n, size, seed, {})) {
    out.push_back(make_sample(it.image, it.annotation, size, default_sigma(size), CropMode::full_image));
  }
  return out;
}

LandmarkMask all_on() {
  LandmarkMask m;
  m.fill(true);
  return m;
}

void reseal(std::string& bytes) {
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
}

}  // namespace

TEST_CASE("masked mse examples") {
  Tape tape;
  const Shape s{1, 8, 4, 4};
  const std::vector<LandmarkMask> on{all_on()};
  CHECK(masked_mse_loss(tape.constant(Tensor::zeros(s)), Tensor::zeros(s), on).value().item() == 0.0);
  CHECK(masked_mse_loss(tape.constant(Tensor::full(s, 0.5)), Tensor::zeros(s), on).value().item() ==
        doctest::Approx(0.25).epsilon(1e-15));

  // only channel 3 is wrong, and it is masked out
  Tensor pred = Tensor::zeros(s);
  for (std::size_t i = 0; i < 16; ++i) pred[3 * 16 + i] = 5.0;
  LandmarkMask m = all_on();
  m[3] = false;
  const std::vector<LandmarkMask> masked{m};
  CHECK(masked_mse_loss(tape.constant(pred), Tensor::zeros(s), masked).value().item() == 0.0);
  // unmasked: 16 elements of error 25 over 8*16 elements
  CHECK(masked_mse_loss(tape.constant(pred), Tensor::zeros(s), on).value().item() ==
        doctest::Approx(25.0 / 8.0).epsilon(1e-15));
}

TEST_CASE("masked channels receive zero gradient") {
  std::mt19937_64 rng(8);
  const Shape s{2, 8, 3, 3};
  Tape tape;
  Var p = tape.input(oracle::random_tensor(s, rng));
  const Tensor t = oracle::random_tensor(s, rng);
  LandmarkMask a = all_on(), b = all_on();
  a[1] = false;
  b[6] = false;
  const std::vector<LandmarkMask> mask{a, b};
  Var loss = masked_mse_loss(p, t, mask);
  tape.backward(loss);
  const Tensor g = tape.grad(p);
  double masked = 0.0, active = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = std::abs(g[(n * 8 + c) * 9 + i]);
        (mask[n][c] ? active : masked) += v;
      }
  CHECK(masked == 0.0);
  CHECK(active > 0.0);
  // analytic gradient 2 (p - t) / (active channels * plane)
  const std::size_t k = (0 * 8 + 0) * 9 + 4;
  CHECK(g[k] == doctest::Approx(2.0 * (p.value()[k] - t[k]) / (14.0 * 9.0)).epsilon(1e-13));
}

TEST_CASE("masked mse preconditions") {
  Tape tape;
  const Shape s{1, 8, 2, 2};
  LandmarkMask none{};
  const std::vector<LandmarkMask> off{none};
  CHECK_THROWS_WITH_AS(masked_mse_loss(tape.constant(Tensor::zeros(s)), Tensor::zeros(s), off),
                       doctest::Contains("masked"), Error);
  const std::vector<LandmarkMask> on{all_on()};
  CHECK_THROWS_AS(masked_mse_loss(tape.constant(Tensor::zeros(s)), Tensor::zeros({1, 8, 2, 3}), on), Error);
  const std::vector<LandmarkMask> two{all_on(), all_on()};
  CHECK_THROWS_AS(masked_mse_loss(tape.constant(Tensor::zeros(s)), Tensor::zeros(s), two), Error);
}

TEST_CASE("optimizer configuration") {
  CHECK(parse_optimizer("adam") == OptimizerKind::adam);
  CHECK(parse_optimizer("sgd_momentum") == OptimizerKind::sgd_momentum);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), Error);
  OptimizerConfig o;
  o.kind = OptimizerKind::sgd_momentum;
  o.learning_rate = 0.05;
  o.batch_size = 4;
  o.seed = 1234567890123ULL;
  KeyValues kv;
  o.store(kv);
  const OptimizerConfig back = OptimizerConfig::from(kv);
  CHECK(back.kind == o.kind);
  CHECK(back.learning_rate == o.learning_rate);
  CHECK(back.batch_size == 4);
  CHECK(back.seed == o.seed);
  o.batch_size = 0;
  CHECK_THROWS_AS(o.validate(), Error);
  o.batch_size = 1;
  o.learning_rate = -1;
  CHECK_THROWS_AS(o.validate(), Error);
}

TEST_CASE("adam and sgd single steps match hand-computed updates") {
  Parameter p{"p", Tensor::full({2}, 1.0)};
  std::vector<Parameter*> params{&p};
  OptimizerConfig o;
  o.learning_rate = 0.1;
  Optimizer adam(o, params);
  p.grad[0] = 0.5;
  p.grad[1] = -2.0;
  adam.step(params);
  // first Adam step moves each coordinate by lr * g / (|g| + eps')
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.value[1] == doctest::Approx(1.1).epsilon(1e-7));

  Parameter q{"q", Tensor::full({1}, 1.0)};
  q.grad[0] = 2.0;
  std::vector<Parameter*> qp{&q};
  o.kind = OptimizerKind::sgd_momentum;
  o.momentum = 0.5;
  Optimizer sgd(o, qp);
  sgd.step(qp);  // v = 2, x = 1 - 0.2
  CHECK(q.value[0] == doctest::Approx(0.8).epsilon(1e-14));
  sgd.step(qp);  // v = 0.5*2 + 2 = 3, x = 0.8 - 0.3
  CHECK(q.value[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  OptimizerConfig o = small_opt();
  o.learning_rate = 0.0;
  Trainer t(small_net(), o);
  std::vector<std::pair<std::string, Tensor>> before;
  for (Parameter* p : t.net().parameters()) before.emplace_back(p->name, p->value);
  const auto samples = small_samples(4);
  for (int i = 0; i < 3; ++i) t.step(samples);
  bool same = true;
  std::size_t i = 0;
  for (Parameter* p : t.net().parameters()) same = same && oracle::values(p->value) == oracle::values(before[i++].second);
  CHECK(same);
  CHECK(t.global_step() == 3);
}

TEST_CASE("a single sample can be overfit") {
  const auto samples = small_samples(1);
  OptimizerConfig o = small_opt();
  o.batch_size = 1;
  o.epochs = 500;
  Trainer t(small_net(), o);
  double first = 0.0, last = 0.0;
  t.run(samples, 0, [&](std::uint64_t step, double loss) {
    if (step == 1) first = loss;
    last = loss;
  });
  CHECK(t.global_step() == 500);
  CHECK(first > 1e-3);
  CHECK(last < 1e-3);
}

TEST_CASE("training is deterministic") {
  const auto samples = small_samples(4);
  Trainer a(small_net(), small_opt()), b(small_net(), small_opt());
  a.run(samples, 6);
  b.run(samples, 6);
  CHECK(a.serialize_checkpoint() == b.serialize_checkpoint());
  Trainer c(small_net(), small_opt(4));
  c.run(samples, 6);
  CHECK(a.serialize_checkpoint() != c.serialize_checkpoint());
}

TEST_CASE("epochs reshuffle and terminate") {
  const auto samples = small_samples(5);
  OptimizerConfig o = small_opt();
  o.epochs = 2;
  Trainer t(small_net(), o);
  std::vector<std::uint64_t> steps;
  t.run(samples, 0, [&](std::uint64_t s, double) { steps.push_back(s); });
  CHECK(t.finished());
  CHECK(t.epoch() == 2);
  CHECK(steps.size() == 6);  // ceil(5 / 2) per epoch
  CHECK(steps.back() == 6);

  Trainer mid(small_net(), o);
  mid.step(samples);
  CHECK_THROWS_WITH_AS(mid.step(small_samples(3)), doctest::Contains("epoch order"), Error);
}

TEST_CASE("checkpoint round trip") {
  const auto samples = small_samples(4);
  Trainer t(small_net(), small_opt());
  t.run(samples, 3);
  const std::string bytes = t.serialize_checkpoint();
  Trainer back = Trainer::from_checkpoint_bytes(bytes, "mem");
  CHECK(back.serialize_checkpoint() == bytes);
  CHECK(back.global_step() == 3);
  for (const auto& [name, tensor] : t.net().named_tensors()) {
    Parameter* p = back.net().find_parameter(name);
    if (p) CHECK(oracle::values(p->value) == oracle::values(*tensor));
  }

  const std::string dir = oracle::scratch_dir("checkpoint");
  t.save_checkpoint(dir + "/a.ckpt");
  Trainer::load_checkpoint(dir + "/a.ckpt").save_checkpoint(dir + "/b.ckpt");
  std::ifstream fa(dir + "/a.ckpt", std::ios::binary), fb(dir + "/b.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa == bytes);
}

TEST_CASE("resumed training matches uninterrupted training") {
  const auto samples = small_samples(5);
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    OptimizerConfig o = small_opt();
    o.kind = kind;
    o.learning_rate = kind == OptimizerKind::adam ? 1e-3 : 1e-2;
    Trainer straight(small_net(), o);
    straight.run(samples, 20);

    Trainer first(small_net(), o);
    first.run(samples, 10);
    Trainer resumed = Trainer::from_checkpoint_bytes(first.serialize_checkpoint(), "mem");
    resumed.run(samples, 20);
    CHECK(resumed.serialize_checkpoint() == straight.serialize_checkpoint());
  }
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto samples = small_samples(2);
  Trainer t(small_net(), small_opt());
  t.run(samples, 1);
  const std::string good = t.serialize_checkpoint();

  auto kind_of = [](const std::string& bytes) {
    try {
      Trainer::from_checkpoint_bytes(bytes, "ckpt");
    } catch (const Error& e) {
      return e.kind();
    }
    FAIL("checkpoint was accepted");
    return ErrorKind::shape;
  };

  std::string flipped = good;
  flipped.back() = static_cast<char>(flipped.back() ^ 0x01);
  CHECK(kind_of(flipped) == ErrorKind::checksum);

  std::string body = good;
  body[good.size() / 2] = static_cast<char>(body[good.size() / 2] ^ 0x10);
  CHECK(kind_of(body) == ErrorKind::checksum);

  CHECK(kind_of(good.substr(0, good.size() - 100)) == ErrorKind::checksum);
  CHECK(kind_of(good.substr(0, 6)) == ErrorKind::format);

  std::string version = good;
  const std::uint32_t v2 = kCheckpointVersion + 1;
  std::memcpy(version.data() + 4, &v2, 4);
  reseal(version);
  CHECK_THROWS_WITH_AS(Trainer::from_checkpoint_bytes(version, "ckpt"),
                       doctest::Contains("version 2"), Error);

  std::string magic = good;
  magic[0] = 'X';
  reseal(magic);
  CHECK(kind_of(magic) == ErrorKind::format);

  CHECK_THROWS_AS(Trainer::load_checkpoint("/nonexistent/dir/x.ckpt"), Error);
}

TEST_CASE("non-finite loss aborts the step without touching state") {
  auto samples = small_samples(2);
  Trainer t(small_net(), small_opt());
  t.run(samples, 1);
  const std::string before = t.serialize_checkpoint();
  samples[0].image[5] = std::numeric_limits<double>::quiet_NaN();
  std::vector<const Sample*> batch{&samples[0], &samples[1]};
  try {
    t.train_step(batch);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
  CHECK(t.serialize_checkpoint() == before);
}
