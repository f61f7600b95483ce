// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_TOOLS_CLI_HPP_
#define SPNET_TOOLS_CLI_HPP_

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spnet/spnet.hpp"

namespace spnet::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataOrConfig = 2, kInternal = 3 };

/// Bad flag values found after parsing (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

inline SwitchConfig parse_switch_flag(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw UsageError("--switch expects bits_w,bits_a,width, got '" + text + "'");
  try {
    SwitchConfig s{std::stoi(parts[0]), std::stoi(parts[1]), Width::parse(parts[2])};
    SwitchConfig::validate_bits(s.bits_w, "bits_w");
    SwitchConfig::validate_bits(s.bits_a, "bits_a");
    return s;
  } catch (const std::exception& e) {
    throw UsageError("--switch '" + text + "': " + e.what());
  }
}

inline RunConfig config_or_default(const std::string& path) { return path.empty() ? parse_config("") : load_config(path); }

inline std::filesystem::path out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw FormatError("cannot create output directory '" + dir + "'");
  return p;
}

inline void check_data_matches(const RunConfig& rc, const data::Dataset& d) {
  if (d.channels != rc.model.input_channels) {
    throw ConfigError("input_channels: config says " + std::to_string(rc.model.input_channels) + ", dataset has " +
                      std::to_string(d.channels));
  }
  if (d.num_classes != rc.model.num_classes) {
    throw ConfigError("num_classes: config says " + std::to_string(rc.model.num_classes) + ", dataset has " +
                      std::to_string(d.num_classes));
  }
  rc.model.check_image_size(d.height, d.width);
}

/// Train and validation splits of a dataset file under a run's val_fraction.
struct Splits {
  data::Dataset train, val;
};

inline Splits load_splits(const std::string& path, const RunConfig& rc) {
  auto d = data::read_dataset(path);
  check_data_matches(rc, d);
  auto [train, val] = data::split_validation(d, rc.train.val_fraction);
  return {std::move(train), std::move(val)};
}

inline void log_epoch(std::ostream& os, const std::string& prefix, const std::vector<MetricsRow>& rows,
                      std::size_t switches) {
  for (auto it = rows.end() - static_cast<std::ptrdiff_t>(switches); it != rows.end(); ++it) {
    os << prefix << "epoch " << it->epoch << " switch " << it->sw.to_string() << " loss=" << format_double(it->train_loss)
       << " train_top1=" << format_double(it->train_top1) << " val_top1=" << format_double(it->val_top1) << '\n';
  }
}

/// Trains a fresh model for one experiment arm and returns its metrics.
inline std::vector<MetricsRow> train_arm(const RunConfig& rc, const Splits& s, std::ostream& log,
                                         const std::string& prefix) {
  rc.validate();
  Model<float> model(rc.model, rc.train.seed);
  Trainer<float> trainer(model, rc.train, s.train, s.val);
  trainer.run([&](Trainer<float>& t) { log_epoch(log, prefix, t.metrics(), rc.model.switches.size()); });
  return trainer.metrics();
}

inline std::string arm_csv(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& arms) {
  std::ostringstream os;
  os << "arm,epoch,switch_bits_w,switch_bits_a,width,train_loss,train_top1,val_top1\n";
  for (const auto& [arm, rows] : arms) {
    for (const auto& r : rows) {
      os << arm << ',' << r.epoch << ',' << r.sw.bits_w << ',' << r.sw.bits_a << ',' << r.sw.width.to_string() << ','
         << format_double(r.train_loss) << ',' << format_double(r.train_top1) << ',' << format_double(r.val_top1)
         << '\n';
    }
  }
  return os.str();
}

/// Runs one command line. Never throws; returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Switchable-precision network trainer and tools", "spnet"};
  app.require_subcommand(1);

  std::string config, data_path, out_path, checkpoint, resume, switch_text, width_text = "1.0", split_name = "val";
  std::optional<std::uint64_t> seed;
  int bits_w = 32, bits_a = 32;
  bool no_fold = false;
  std::vector<std::size_t> sizes{64, 256, 1024, 4096, 16384};
  data::SyntheticOptions gen;

  auto* train = app.add_subcommand("train", "train a switchable model");
  train->add_option("--config", config, "config file (defaults when omitted)")->check(CLI::ExistingFile);
  train->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--seed", seed, "run seed (default: config seed, itself 0 by default)");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate one switch of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--bits-w", bits_w)->required();
  eval->add_option("--bits-a", bits_a)->required();
  eval->add_option("--width", width_text, "width multiplier, e.g. 1.0, 0.25 or 1/4");
  eval->add_option("--split", split_name, "val (default), train or all")->check(CLI::IsMember({"val", "train", "all"}));

  auto* sweep = app.add_subcommand("sweep", "accuracy of every registered switch");
  sweep->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sweep->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out_path)->required();
  sweep->add_option("--split", split_name)->check(CLI::IsMember({"val", "train", "all"}));

  auto* ablate = app.add_subcommand("ablate-bn", "switchable BN versus shared BN");
  ablate->add_option("--config", config)->required()->check(CLI::ExistingFile);
  ablate->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", out_path)->required();
  ablate->add_option("--seed", seed);

  auto* distill = app.add_subcommand("distill-compare", "no distillation versus L_out versus L_out + L_f");
  distill->add_option("--config", config)->required()->check(CLI::ExistingFile);
  distill->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  distill->add_option("--out", out_path)->required();
  distill->add_option("--seed", seed);

  auto* bench = app.add_subcommand("bench-kernel", "float versus xnor-popcount dot products");
  bench->add_option("--out", out_path)->required();
  bench->add_option("--sizes", sizes, "vector lengths")->delimiter(',');
  bench->add_option("--seed", seed);

  auto* exp = app.add_subcommand("export-merged", "single-switch inference artifact");
  exp->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  exp->add_option("--switch", switch_text, "bits_w,bits_a,width")->required();
  exp->add_option("--out", out_path)->required();
  exp->add_flag("--no-fold", no_fold, "keep BN as a separate affine everywhere");

  auto* gd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gd->add_option("--out", out_path, "dataset file to write")->required();
  gd->add_option("--classes", gen.classes)->check(CLI::Range(2, 65535));
  gd->add_option("--count", gen.count)->check(CLI::Range(1, 100000000));
  gd->add_option("--channels", gen.channels)->check(CLI::Range(1, 255));
  gd->add_option("--height", gen.height)->check(CLI::Range(1, 65535));
  gd->add_option("--width", gen.width)->check(CLI::Range(1, 65535));
  gd->add_option("--seed", gen.seed);
  gd->add_option("--noise", gen.noise)->check(CLI::Range(0.0, 10.0));

  std::vector<const char*> argv{"spnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsage;
  }

  try {
    if (*gd) {
      const auto d = data::generate_synthetic(gen);
      data::write_dataset(out_path, d);
      out << "wrote " << d.size() << " records (" << d.num_classes << " classes, " << d.channels << "x" << d.height
          << "x" << d.width << ") to " << out_path << '\n';
    } else if (*train) {
      RunConfig rc;
      std::optional<Checkpoint> ck;
      if (!resume.empty()) {
        ck = load_checkpoint(resume);
        rc = ck->run_config();
        if (!config.empty() && emit_canonical(load_config(config)) != ck->config) {
          throw ConfigError("--resume: checkpoint was written under a different config than " + config);
        }
        if (seed && *seed != rc.train.seed) {
          throw ConfigError("--seed " + std::to_string(*seed) + " differs from the checkpoint's seed " +
                            std::to_string(rc.train.seed));
        }
      } else {
        rc = config_or_default(config);
        if (seed) rc.train.seed = *seed;
      }
      rc.validate();
      const auto splits = load_splits(data_path, rc);
      const auto dir = out_dir(out_path);
      Model<float> model(rc.model, rc.train.seed);
      Trainer<float> trainer(model, rc.train, splits.train, splits.val);
      if (ck) {
        restore_trainer(*ck, trainer);
        out << "resumed at epoch " << trainer.epoch() << '\n';
      }
      trainer.run([&](Trainer<float>& t) {
        log_epoch(out, "", t.metrics(), rc.model.switches.size());
        const auto every = rc.train.checkpoint_every;
        if (every > 0 && t.epoch() % every == 0 && t.epoch() < rc.train.epochs) {
          char name[32];
          std::snprintf(name, sizeof name, "epoch_%03zu.spck", t.epoch());
          save_checkpoint((dir / name).string(), make_checkpoint(t, rc));
        }
      });
      save_checkpoint((dir / "final.spck").string(), make_checkpoint(trainer, rc));
      io::write_text((dir / "metrics.csv").string(), metrics_csv(trainer.metrics()));
      out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "final.spck").string() << '\n';
    } else if (*eval || *sweep) {
      std::optional<SwitchConfig> wanted;
      if (*eval) {
        try {
          wanted = SwitchConfig{bits_w, bits_a, Width::parse(width_text)};
        } catch (const ValueError& e) {
          throw UsageError(std::string("--width: ") + e.what());
        }
      }
      const auto ck = load_checkpoint(checkpoint);
      const auto rc = ck.run_config();
      Model<float> model(rc.model, rc.train.seed);
      if (wanted) (void)model.select(*wanted);
      restore_model(ck, model);
      const auto splits = load_splits(data_path, rc);
      data::Dataset all;
      const data::Dataset* target = &splits.val;
      if (split_name == "train") target = &splits.train;
      if (split_name == "all") {
        all = data::read_dataset(data_path);
        target = &all;
      }
      if (wanted) {
        out << "top1=" << format_double(evaluate(model, *target, *wanted)) << '\n';
      } else {
        const auto dir = out_dir(out_path);
        std::ostringstream csv;
        csv << "switch_bits_w,switch_bits_a,width,top1\n";
        for (const auto& s : rc.model.switches) {
          const auto acc = evaluate(model, *target, s);
          csv << s.bits_w << ',' << s.bits_a << ',' << s.width.to_string() << ',' << format_double(acc) << '\n';
          out << s.to_string() << " top1=" << format_double(acc) << '\n';
        }
        io::write_text((dir / "sweep.csv").string(), csv.str());
      }
    } else if (*ablate) {
      auto rc = load_config(config);
      if (seed) rc.train.seed = *seed;
      if (rc.model.switches.size() < 2) {
        throw ConfigError("switches: ablate-bn needs at least two switches (a single switch has nothing to share)");
      }
      const auto splits = load_splits(data_path, rc);
      const auto dir = out_dir(out_path);
      auto sbn = rc, shared = rc;
      sbn.model.shared_bn = false;
      shared.model.shared_bn = true;
      const auto a = train_arm(sbn, splits, out, "[s-bn] ");
      const auto b = train_arm(shared, splits, out, "[shared-bn] ");
      io::write_text((dir / "ablate_bn.csv").string(), arm_csv({{"switchable_bn", a}, {"shared_bn", b}}));
      out << "wrote " << (dir / "ablate_bn.csv").string() << '\n';
    } else if (*distill) {
      auto rc = load_config(config);
      if (seed) rc.train.seed = *seed;
      const auto splits = load_splits(data_path, rc);
      const std::vector<std::pair<std::string, Distillation>> modes{
          {"regular", Distillation::Off}, {"l_out", Distillation::OutOnly}, {"l_out_l_f", Distillation::OutPlusFeature}};
      for (const auto& [name, mode] : modes) {
        auto arm = rc;
        arm.train.distillation = mode;
        arm.validate();
      }
      const auto dir = out_dir(out_path);
      std::vector<std::pair<std::string, std::vector<MetricsRow>>> arms;
      for (const auto& [name, mode] : modes) {
        auto arm = rc;
        arm.train.distillation = mode;
        arms.emplace_back(name, train_arm(arm, splits, out, "[" + name + "] "));
      }
      io::write_text((dir / "distill.csv").string(), arm_csv(arms));
      out << "wrote " << (dir / "distill.csv").string() << '\n';
    } else if (*bench) {
      for (auto n : sizes) {
        if (n == 0) throw UsageError("--sizes: lengths must be >= 1");
      }
      const auto dir = out_dir(out_path);
      const auto rows = binary::kernel_bench(sizes, seed.value_or(1));
      const auto csv = binary::bench_csv(rows);
      io::write_text((dir / "kernel_bench.csv").string(), csv);
      out << csv;
    } else if (*exp) {
      const auto s = parse_switch_flag(switch_text);
      const auto ck = load_checkpoint(checkpoint);
      const auto rc = ck.run_config();
      Model<float> model(rc.model, rc.train.seed);
      (void)model.select(s);
      restore_model(ck, model);
      std::vector<std::string> warnings;
      const auto merged = export_merged(model, rc, s, !no_fold, warnings);
      for (const auto& w : warnings) err << "warning: " << w << '\n';
      const auto dir = out_dir(out_path);
      save_merged((dir / "merged.spmg").string(), merged);
      out << "wrote " << (dir / "merged.spmg").string() << " for switch " << s.to_string() << " ("
          << merged.quantized_payload_bytes() << " bytes of quantized weights)\n";
    }
    return kSuccess;
  } catch (const UsageError& e) {
    err << "spnet: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "spnet: config error: " << e.what() << '\n';
    return kDataOrConfig;
  } catch (const FormatError& e) {
    err << "spnet: data error: " << e.what() << '\n';
    return kDataOrConfig;
  } catch (const SwitchError& e) {
    err << "spnet: " << e.what() << '\n';
    return kDataOrConfig;
  } catch (const ValueError& e) {
    err << "spnet: invalid value: " << e.what() << '\n';
    return kDataOrConfig;
  } catch (const std::exception& e) {
    err << "spnet: internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace spnet::cli

#endif  // SPNET_TOOLS_CLI_HPP_
