// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "spnet/checkpoint.hpp"
#include "spnet/data.hpp"

namespace spnet {
namespace {

RunConfig small_run(OptimizerKind opt = OptimizerKind::SGD, Distillation d = Distillation::Off) {
  auto rc = parse_config(
      "[model]\nchannels = 8, 8\nstrides = 1, 2\nstem_channels = 8\n"
      "switches = (1,2,1.0),(32,32,1.0)\n[train]\nbatch_size = 25\nepochs = 4\nmilestones = 2\nseed = 3\n");
  rc.train.optimizer = opt;
  rc.train.distillation = d;
  if (opt == OptimizerKind::Adam) rc.train.lr = 0.01;
  return rc;
}

struct Fixture {
  data::Dataset train, val;
  Fixture() {
    data::SyntheticOptions o;
    o.count = 120;
    std::tie(train, val) = data::split_validation(data::generate_synthetic(o), 0.25);
  }
};

std::string format_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  ADD_FAILURE() << "accepted a malformed checkpoint";
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Fixture f;
  for (auto opt : {OptimizerKind::SGD, OptimizerKind::Adam}) {
    const auto rc = small_run(opt);
    Model<float> m(rc.model, rc.train.seed);
    Trainer<float> t(m, rc.train, f.train, f.val);
    t.run_epoch();
    const auto first = encode(make_checkpoint(t, rc));

    const auto path = (std::filesystem::temp_directory_path() / "spnet_ckpt_test.spck").string();
    io::write_file(path, first);
    const auto loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    const auto rc2 = loaded.run_config();
    Model<float> m2(rc2.model, 99);
    Trainer<float> t2(m2, rc2.train, f.train, f.val);
    restore_trainer(loaded, t2);
    EXPECT_EQ(encode(make_checkpoint(t2, rc2)), first);
    EXPECT_EQ(t2.epoch(), 1u);
    EXPECT_EQ(t2.optimizer().steps(), t.optimizer().steps());
    EXPECT_EQ(t2.metrics(), t.metrics());
  }
}

TEST(Checkpoint, ResumeIsMetricIdenticalToAnUninterruptedRun) {
  Fixture f;
  for (auto [opt, d] : {std::pair{OptimizerKind::SGD, Distillation::Off},
                        std::pair{OptimizerKind::Adam, Distillation::OutPlusFeature}}) {
    const auto rc = small_run(opt, d);
    Model<float> straight(rc.model, rc.train.seed);
    Trainer<float> ts(straight, rc.train, f.train, f.val);
    std::vector<std::uint8_t> at_two;
    ts.run([&](Trainer<float>& t) {
      if (t.epoch() == 2) at_two = encode(make_checkpoint(t, rc));
    });

    const auto ck = decode_checkpoint(at_two);
    const auto rc2 = ck.run_config();
    Model<float> resumed(rc2.model, 12345);
    Trainer<float> tr(resumed, rc2.train, f.train, f.val);
    restore_trainer(ck, tr);
    tr.run();
    ASSERT_EQ(tr.metrics().size(), 8u);
    EXPECT_EQ(tr.metrics(), ts.metrics());
    EXPECT_EQ(metrics_csv(tr.metrics()), metrics_csv(ts.metrics()));
    EXPECT_EQ(encode(make_checkpoint(tr, rc2)), encode(make_checkpoint(ts, rc)));
  }
}

TEST(Checkpoint, MissingTensorIsNamed) {
  Fixture f;
  const auto rc = small_run();
  Model<float> m(rc.model);
  Trainer<float> t(m, rc.train, f.train, f.val);
  for (const std::string name : {"block1/bn/s1/running_var", "head/bias", "optim/stem/weight/velocity"}) {
    auto ck = make_checkpoint(t, rc);
    std::erase_if(ck.tensors, [&](const NamedTensor& n) { return n.name == name; });
    const auto back = decode_checkpoint(encode(ck));
    Model<float> m2(rc.model);
    Trainer<float> t2(m2, rc.train, f.train, f.val);
    try {
      restore_trainer(back, t2);
      ADD_FAILURE() << "restored without " << name;
    } catch (const FormatError& e) {
      EXPECT_EQ(std::string(e.what()), "checkpoint: missing tensor " + name);
    }
  }
}

TEST(Checkpoint, CorruptionsHaveDistinctDiagnostics) {
  const auto rc = small_run();
  Model<float> m(rc.model);
  const auto good = encode(make_checkpoint(m, rc, 0));

  auto magic = good;
  magic[1] = 'Z';
  EXPECT_TRUE(contains(format_error(magic), "bad magic"));
  data::SyntheticOptions o;
  o.count = 4;
  EXPECT_TRUE(contains(format_error(data::encode(data::generate_synthetic(o))), "dataset file (SPDS)"));

  auto version = good;
  version[4] = 2;
  EXPECT_TRUE(contains(format_error(version), "unsupported version 2"));

  for (std::size_t cut : {std::size_t{5}, std::size_t{30}, good.size() / 2, good.size() - 1}) {
    EXPECT_TRUE(contains(format_error({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)}), "truncated"))
        << cut;
  }
  auto trailing = good;
  trailing.push_back(7);
  EXPECT_TRUE(contains(format_error(trailing), "trailing"));

  auto ck = make_checkpoint(m, rc, 0);
  ck.tensors[0].shape = {1, 1, 1, ck.tensors[0].data.size()};
  Model<float> m2(rc.model);
  EXPECT_THROW(restore_model(decode_checkpoint(encode(ck)), m2), FormatError);
}

TEST(Checkpoint, ExtraSwitchesGrowOnlyBatchNormStorage) {
  auto one = parse_config("[model]\nswitches = (1,2,1.0)\n");
  auto three = parse_config("[model]\nswitches = (1,2,1.0),(2,2,1.0),(32,32,1.0)\n");
  Model<float> m1(one.model), m3(three.model);
  auto payload = [](const Checkpoint& c) {
    std::size_t weights = 0, bn = 0;
    for (const auto& t : c.tensors) (t.name.find("/bn/") != std::string::npos ? bn : weights) += t.data.size() * 4;
    return std::pair{weights, bn};
  };
  const auto [w1, bn1] = payload(make_checkpoint(m1, one, 0));
  const auto [w3, bn3] = payload(make_checkpoint(m3, three, 0));
  EXPECT_EQ(w1, w3);
  std::size_t channels = 0;
  for (auto* l : m1.layers()) channels += l->out_channels();
  EXPECT_EQ(bn1, 4 * 4 * channels);  // gamma, beta, mean, var per channel
  EXPECT_EQ(bn3, 3 * bn1);
  EXPECT_LT(static_cast<double>(bn3 - bn1), 0.05 * static_cast<double>(w1));
}

}  // namespace
}  // namespace spnet
