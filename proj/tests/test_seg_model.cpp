#include <doctest.h>

#include "fsam/checkpoint.hpp"
#include "fsam/loss.hpp"
#include "fsam/optim.hpp"
#include "fsam/seg_model.hpp"
#include "fsam/synth.hpp"
#include "fsam/train.hpp"
#include "oracles.hpp"

using namespace fsam;

namespace {

Mat random_mat(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> n(0.0, scale);
  return Mat::NullaryExpr(r, c, [&]() { return n(rng); });
}

Image random_image(Index size, std::uint64_t seed) {
  auto rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(size, size, 1);
  img.channels[0] = img.channels[0].unaryExpr([&](double) { return u(rng); });
  return img;
}

LabelGrid random_labels(Index h, Index w, int k, std::uint64_t seed) {
  auto rng = make_rng(seed, 3);
  std::uniform_int_distribution<int> u(0, k - 1);
  return LabelGrid::NullaryExpr(h, w, [&]() { return u(rng); });
}

MaskLogits logits_of(const Mat& values, Index h, Index w) { return MaskLogits{values, h, w}; }

}  // namespace

TEST_CASE("toy model: audit counts and deterministic construction") {
  FSAMConfig cfg;
  FSAMModel model(cfg);
  const ParameterAudit audit = model.audit();
  CHECK(audit.count(ParamGroup::Lora) == 3 * 2 * 16 * 4 * 2);
  CHECK(audit.count(ParamGroup::MemoryBank) == 8 * 16);
  CHECK(audit.count(ParamGroup::PromptHead) == 33 * 16 + 16);
  CHECK(audit.frozen > 0);
  CHECK(audit.trainable == audit.count(ParamGroup::Lora) + audit.count(ParamGroup::Adapter) +
                               audit.count(ParamGroup::FreqEmbed) + audit.count(ParamGroup::MemoryBank) +
                               audit.count(ParamGroup::PromptHead) + audit.count(ParamGroup::Decoder));

  FSAMModel twin(cfg);
  auto a = model.parameters().begin();
  for (const Parameter& p : twin.parameters()) {
    CHECK(p.name == a->name);
    CHECK(p.value == a->value);
    ++a;
  }
  cfg.seed = 1;
  FSAMModel other(cfg);
  CHECK(other.parameters().at("prompt.memory_bank").value != model.parameters().at("prompt.memory_bank").value);
}

TEST_CASE("zero-initialized LoRA and adapters reproduce the baseline bit for bit") {
  FSAMConfig cfg;
  FSAMModel model(cfg);
  FSAMConfig ablated_cfg = cfg;
  ablated_cfg.use_frequency = false;
  FSAMModel ablated(ablated_cfg);
  CHECK_FALSE(ablated.has_frequency_pathway());
  CHECK(ablated.audit().count(ParamGroup::Adapter) == 0);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Image img = random_image(cfg.vit.image_size, s);
    const Mat full = model.forward(img).values;
    CHECK(full == model.forward(img, {.lora = false, .frequency = false}).values);
    CHECK(full == ablated.forward(img).values);
  }
}

TEST_CASE("forward shapes and argmax") {
  FSAMConfig cfg;
  cfg.vit.image_size = 64;
  cfg.vit.patch_size = 8;
  FSAMModel model(cfg);
  const MaskLogits out = model.forward(random_image(64, 5));
  CHECK(out.height == 64);
  CHECK(out.width == 64);
  CHECK(out.num_classes() == 2);
  CHECK(out.values.rows() == 64 * 64);
  const LabelGrid lab = out.argmax();
  CHECK(lab.rows() == 64);
  CHECK(lab.cols() == 64);
  CHECK(out.plane(1)(3, 7) == out.values(3 * 64 + 7, 1));
  CHECK_THROWS_AS(model.forward(random_image(32, 0)), Error);
}

TEST_CASE("decoder with zero weights emits its bias everywhere") {
  FSAMConfig cfg;
  cfg.num_classes = 3;
  FSAMModel model(cfg);
  for (Parameter& p : model.parameters())
    if (p.group == ParamGroup::Decoder) p.value.setZero();
  Mat& b = model.parameters().at("decoder.proj.bias").value;
  b << 0.5, -1.25, 2.0;
  const MaskLogits out = model.forward(random_image(cfg.vit.image_size, 1));
  for (Index i = 0; i < out.values.rows(); ++i) CHECK(out.values.row(i) == b.row(0));
}

TEST_CASE("hybrid loss: pure terms, oracle mixture, bound, limit, label errors") {
  const Index h = 4, w = 4;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const int k = 2 + static_cast<int>(s % 2);
    const MaskLogits lg = logits_of(random_mat(h * w, k, s, 2.0), h, w);
    const LabelGrid gt = random_labels(h, w, k, s);
    const double ce = cross_entropy(lg, gt), dl = dice_loss(lg, gt);
    CHECK(hybrid_loss(lg, gt, 0.0).total == ce);
    CHECK(hybrid_loss(lg, gt, 1.0).total == dl);
    const double expect = 0.2 * oracle::cross_entropy(lg.values, gt) + 0.8 * oracle::dice_loss(lg.values, gt, kDiceSmooth);
    CHECK(std::abs(hybrid_loss(lg, gt, 0.8).total - expect) < 1e-6);
    CHECK(std::abs(ce - oracle::cross_entropy(lg.values, gt)) < 1e-12);
    CHECK(std::abs(dl - oracle::dice_loss(lg.values, gt, kDiceSmooth)) < 1e-12);
  }

  auto rng = make_rng(7, 0);
  std::uniform_real_distribution<double> lam(0.0, 1.0);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const MaskLogits lg = logits_of(random_mat(16, 3, 100 + s, 3.0), 4, 4);
    const LabelGrid gt = random_labels(4, 4, 3, 100 + s);
    const double l = lam(rng);
    const LossTerms t = hybrid_loss(lg, gt, l);
    CHECK(t.total >= std::min(t.ce, t.dice_loss) - 1e-12);
    CHECK(t.total <= std::max(t.ce, t.dice_loss) + 1e-12);
  }

  LabelGrid gt = random_labels(4, 4, 2, 3);
  gt(0, 0) = 1;
  Mat confident(16, 2);
  for (Index i = 0; i < 16; ++i) {
    const int y = gt(i / 4, i % 4);
    confident(i, y) = 60.0;
    confident(i, 1 - y) = -60.0;
  }
  const LossTerms perfect = hybrid_loss(logits_of(confident, 4, 4), gt, 0.8);
  CHECK(perfect.ce < 1e-12);
  CHECK(perfect.dice_loss < 1e-6);

  LabelGrid bad = gt;
  bad(2, 1) = 2;
  try {
    (void)hybrid_loss(logits_of(confident, 4, 4), bad, 0.8);
    FAIL("expected label-out-of-range");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LabelOutOfRange);
  }
  CHECK_THROWS_AS(hybrid_loss(logits_of(confident, 4, 4), LabelGrid::Zero(3, 4), 0.8), Error);
}

TEST_CASE("hybrid loss gradient matches central differences") {
  const MaskLogits base = logits_of(random_mat(25, 3, 9), 5, 5);
  const LabelGrid gt = random_labels(5, 5, 3, 9);
  Mat d;
  (void)hybrid_loss(base, gt, 0.8, &d);
  Mat x = base.values;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + 1e-6;
    const double up = hybrid_loss(logits_of(x, 5, 5), gt, 0.8).total;
    x.data()[i] = saved - 1e-6;
    const double down = hybrid_loss(logits_of(x, 5, 5), gt, 0.8).total;
    x.data()[i] = saved;
    CHECK(std::abs((up - down) / 2e-6 - d.data()[i]) < 1e-7);
  }
}

TEST_CASE("learning-rate schedule") {
  CHECK(learning_rate(0, 5e-4, 25, 1000) == doctest::Approx(5e-4 / 25));
  CHECK(learning_rate(24, 5e-4, 25, 1000) == doctest::Approx(5e-4));
  CHECK(learning_rate(25, 5e-4, 25, 1000) == doctest::Approx(5e-4));
  CHECK(learning_rate(525, 5e-4, 25, 1000) == doctest::Approx(5e-4 * std::pow(0.5, 0.9)));
  for (Index s = 25; s < 1000; ++s) CHECK(learning_rate(s + 1, 5e-4, 25, 1000) <= learning_rate(s, 5e-4, 25, 1000));
}

TEST_CASE("AdamW: decoupled decay and frozen parameters untouched") {
  ParameterStore store;
  Parameter& frozen = store.add("f", 2, 2, ParamGroup::FrozenBase);
  Parameter& live = store.add("l", 1, 2, ParamGroup::Decoder);
  frozen.value.setConstant(1.0);
  frozen.grad.setConstant(3.0);
  live.value << 1.0, -2.0;
  live.grad.setZero();
  AdamW opt(0.1);
  opt.step(store, 0.5);
  CHECK(frozen.value == Mat::Constant(2, 2, 1.0));
  // zero gradient: only the decay term moves the weights
  CHECK(live.value(0, 0) == doctest::Approx(1.0 * (1.0 - 0.5 * 0.1)));
  CHECK(live.value(0, 1) == doctest::Approx(-2.0 * (1.0 - 0.5 * 0.1)));

  live.grad << 1.0, -1.0;
  const Mat before = live.value;
  AdamW plain(0.0);
  plain.step(store, 1e-3);
  // first bias-corrected Adam step has magnitude lr
  CHECK(live.value(0, 0) == doctest::Approx(before(0, 0) - 1e-3).epsilon(1e-6));
  CHECK(live.value(0, 1) == doctest::Approx(before(0, 1) + 1e-3).epsilon(1e-6));
}

TEST_CASE("model gradients match central differences for every trainable group") {
  FSAMConfig cfg;
  FSAMModel model(cfg);
  std::uint64_t s = 50;
  for (Parameter& p : model.parameters())
    if (p.trainable()) p.value += random_mat(p.value.rows(), p.value.cols(), s++, 0.2);
  const Image img = random_image(cfg.vit.image_size, 4);
  const LabelGrid gt = random_labels(cfg.vit.image_size, cfg.vit.image_size, 2, 4);
  auto loss = [&]() { return hybrid_loss(model.forward(img), gt, 0.8).total; };

  const auto trace = model.trace(img);
  Mat d;
  (void)hybrid_loss(trace.logits, gt, 0.8, &d);
  model.parameters().zero_grad();
  model.backward(trace, d);

  auto pick = std::mt19937_64(1);
  for (Parameter& p : model.parameters()) {
    if (!p.trainable()) continue;
    std::vector<Index> entries;
    for (int i = 0; i < 3; ++i) entries.push_back(static_cast<Index>(pick() % static_cast<std::uint64_t>(p.size())));
    CHECK_MESSAGE(oracle::max_grad_error(p, p.grad, loss, entries) < 1e-4, p.name);
  }
}

TEST_CASE("checkpoint: byte-stable round trip, bit-exact forward, integrity") {
  FSAMConfig cfg;
  FSAMModel model(cfg);
  for (Parameter& p : model.parameters())
    if (p.trainable()) p.value += random_mat(p.value.rows(), p.value.cols(), 77, 0.01);
  const Checkpoint ck = capture_checkpoint(model, 3, 0.5, "{\"seed\":0}", "A");
  const std::string bytes = serialize_checkpoint(ck);
  CHECK(serialize_checkpoint(capture_checkpoint(model, 3, 0.5, "{\"seed\":0}", "A")) == bytes);

  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.epoch == 3);
  CHECK(back.source_domain == "A");
  CHECK(serialize_checkpoint(back) == bytes);
  const auto restored = model_from_checkpoint(back);
  const Image img = random_image(cfg.vit.image_size, 8);
  CHECK(restored->forward(img).values == model.forward(img).values);

  auto expect_integrity = [](std::string_view b) {
    try {
      (void)parse_checkpoint(b);
      FAIL("expected integrity error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Integrity);
    }
  };
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x01;
  expect_integrity(flipped);
  expect_integrity(bytes.substr(0, bytes.size() - 8));
  expect_integrity("NOTACKPT" + bytes.substr(8));
  expect_integrity(bytes.substr(0, 10));

  Checkpoint wrong = ck;
  wrong.tensors.pop_back();
  CHECK_THROWS_AS(restore_checkpoint(*build(cfg), wrong), Error);
}

TEST_CASE("checkpoint reader accepts float32 tensors") {
  const Mat m = (Mat(1, 3) << 0.5, -1.0, 2.25).finished();
  std::string payload;
  for (Index j = 0; j < 3; ++j) {
    const float f = static_cast<float>(m(0, j));
    payload.append(reinterpret_cast<const char*>(&f), sizeof f);
  }
  nlohmann::json manifest = {{"format_version", 1},
                             {"config", FSAMConfig{}},
                             {"epoch", 0},
                             {"best_val_dsc", 0.0},
                             {"rng_state", ""},
                             {"source_domain", ""},
                             {"tensors", {{{"name", "t"}, {"dtype", "float32"}, {"shape", {1, 3}}, {"offset", 0}, {"nbytes", 12}}}}};
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(payload)));
  manifest["payload_fnv1a64"] = hex;
  const std::string text = manifest.dump();
  std::string bytes = "FSAMCKPT";
  const std::uint32_t version = 1;
  const std::uint64_t len = text.size();
  bytes.append(reinterpret_cast<const char*>(&version), 4);
  bytes.append(reinterpret_cast<const char*>(&len), 8);
  bytes += text + payload;
  const Checkpoint ck = parse_checkpoint(bytes);
  REQUIRE(ck.find("t") != nullptr);
  CHECK(*ck.find("t") == m);
}

TEST_CASE("fit: frozen weights untouched, every trainable group moves, loss falls") {
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.samples_per_domain = 4;
  spec.gains = {1.0, 2.0};
  spec.noise = {0.0, 0.0};
  const Dataset data = synth_domain_dataset(spec);
  FSAMConfig cfg;
  cfg.batch_size = 2;
  cfg.max_epochs = 5;
  cfg.early_stop_epoch = 5;
  cfg.warmup_steps = 2;
  FSAMModel model(cfg);
  std::map<std::string, std::uint64_t> before;
  for (const Parameter& p : model.parameters()) before[p.name] = checksum(p.value);

  const auto& train = data.at("A");
  const FitResult r = fit(model, train, std::span<const Sample>(train.data(), 2));
  CHECK(r.steps == 10);
  CHECK(r.epochs == 5);
  CHECK(r.records.size() == 10);
  CHECK(r.records.back().val_dsc.has_value());
  CHECK_FALSE(r.records.front().val_dsc.has_value());

  std::map<ParamGroup, bool> moved;
  for (const Parameter& p : model.parameters()) {
    const bool changed = checksum(p.value) != before[p.name];
    if (p.group == ParamGroup::FrozenBase) CHECK_MESSAGE(!changed, p.name);
    else moved[p.group] = moved[p.group] || changed;
  }
  for (ParamGroup g : {ParamGroup::Lora, ParamGroup::Adapter, ParamGroup::FreqEmbed, ParamGroup::MemoryBank,
                       ParamGroup::PromptHead, ParamGroup::Decoder})
    CHECK_MESSAGE(moved[g], to_string(g));
  CHECK(r.records.back().loss < r.records.front().loss);

  CHECK(epoch_order(7, 3, 2) == epoch_order(7, 3, 2));
  CHECK(epoch_order(7, 3, 2) != epoch_order(7, 3, 3));
  CHECK(steps_per_epoch(9, 4) == 3);
}
