#include "mrsn/app.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mrsn/binary_io.hpp"
#include "mrsn/verify.hpp"

namespace mrsn {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"model", to_json(cfg.model)},
          {"train", to_json(cfg.train)},
          {"long_train", to_json(cfg.long_train)},
          {"data", to_json(cfg.data)},
          {"paths", {{"data", cfg.paths.data}, {"checkpoint", cfg.paths.checkpoint}, {"bank", cfg.paths.bank}}},
          {"eval_split", cfg.eval_split}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig cfg;
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const json& v = item.value();
    try {
      if (key == "seed") {
        cfg.seed = v.get<std::uint64_t>();
      } else if (key == "model") {
        cfg.model = model_config_from_json(v);
      } else if (key == "train") {
        cfg.train = train_config_from_json(v);
      } else if (key == "long_train") {
        cfg.long_train = train_config_from_json(v);
      } else if (key == "data") {
        cfg.data = synthetic_spec_from_json(v);
      } else if (key == "eval_split") {
        cfg.eval_split = v.get<std::string>();
      } else if (key == "paths") {
        if (!v.is_object()) throw ConfigError("paths must be a JSON object");
        for (const auto& p : v.items()) {
          if (p.key() == "data") {
            cfg.paths.data = p.value().get<std::string>();
          } else if (p.key() == "checkpoint") {
            cfg.paths.checkpoint = p.value().get<std::string>();
          } else if (p.key() == "bank") {
            cfg.paths.bank = p.value().get<std::string>();
          } else {
            throw ConfigError("unknown key '" + p.key() + "' in paths");
          }
        }
      } else {
        throw ConfigError("unknown key '" + key + "' in run config");
      }
    } catch (const json::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void require_compatible(const ModelConfig& expected, const ModelConfig& found, const std::string& what) {
  const json a = to_json(expected), b = to_json(found);
  if (a == b) return;
  std::string detail;
  for (const auto& op : json::diff(a, b)) {
    const std::string ptr = op.at("path").get<std::string>();
    const json::json_pointer jp(ptr);
    const std::string want = a.contains(jp) ? a.at(jp).dump() : "(absent)";
    const std::string got = b.contains(jp) ? b.at(jp).dump() : "(absent)";
    if (!detail.empty()) detail += "; ";
    detail += ptr.substr(1) + ": config has " + want + ", " + what + " has " + got;
  }
  throw ConfigError("model configuration mismatch with " + what + " (" + detail + ")");
}

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode = "short";
  std::string out = ".";
  std::string data, checkpoint, bank, split;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.long_train.seed = *o.seed;
  }
  if (!o.data.empty()) cfg.paths.data = o.data;
  if (!o.checkpoint.empty()) cfg.paths.checkpoint = o.checkpoint;
  if (!o.bank.empty()) cfg.paths.bank = o.bank;
  if (!o.split.empty()) cfg.eval_split = o.split;
  cfg.model.validate();
  cfg.train.validate();
  cfg.long_train.validate();
  return cfg;
}

fs::path prepare_out(const Options& o, const RunConfig& cfg) {
  const fs::path out(o.out);
  fs::create_directories(out);
  io::write_file((out / "resolved_config.json").string(), to_json(cfg).dump(2) + "\n");
  return out;
}

Dataset obtain_dataset(const RunConfig& cfg) {
  if (cfg.paths.data.empty()) return make_synthetic_dataset(cfg.data);
  if (!fs::exists(fs::path(cfg.paths.data) / "manifest.json")) {
    throw DataError("dataset not found: " + cfg.paths.data + " has no manifest.json");
  }
  return load_dataset(cfg.paths.data);
}

Model<float> load_model(const RunConfig& cfg, const std::string& config_path_given) {
  if (cfg.paths.checkpoint.empty()) throw ConfigError("checkpoint not found: no checkpoint path given");
  if (!fs::exists(cfg.paths.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.paths.checkpoint);
  Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
  if (!config_path_given.empty()) require_compatible(cfg.model, ck.config, "checkpoint");
  Model<float> model(ck.config, cfg.seed);
  model.load_state(ck.params);
  return model;
}

Bank load_bank(const RunConfig& cfg, const ModelConfig& model_cfg) {
  if (cfg.paths.bank.empty() || !fs::exists(cfg.paths.bank)) {
    throw ConfigError("bank not found" + (cfg.paths.bank.empty() ? std::string() : ": " + cfg.paths.bank) +
                      " (run build-lrb first)");
  }
  Bank bank = Bank::load(cfg.paths.bank);
  if (bank.meta().model_dim != model_cfg.mrse.model_dim) {
    throw ConfigError("bank model_dim " + std::to_string(bank.meta().model_dim) + " does not match checkpoint model_dim " +
                      std::to_string(model_cfg.mrse.model_dim));
  }
  if (bank.meta().config_hash != config_hash(model_cfg)) {
    throw ConfigError("bank was built from a different model configuration than the checkpoint");
  }
  return bank;
}

json report_json(const MapReport& r, const std::vector<std::string>& names) {
  json classes = json::array();
  for (std::size_t c = 0; c < r.class_ap.size(); ++c) {
    json entry{{"class", c}, {"gt", r.class_gt_count[c]}};
    if (c < names.size()) entry["name"] = names[c];
    entry["ap"] = std::isnan(r.class_ap[c]) ? json(nullptr) : json(r.class_ap[c]);
    classes.push_back(entry);
  }
  return {{"classes", classes}, {"map", r.mean_ap}};
}

class MetricsFile {
 public:
  explicit MetricsFile(const fs::path& path) : stream_(path, std::ios::binary | std::ios::trunc) {
    if (!stream_) throw DataError("cannot write " + path.string());
  }
  void operator()(const json& line) {
    stream_ << line.dump() << '\n';
    stream_.flush();
  }

 private:
  std::ofstream stream_;
};

int cmd_make_data(const Options& o, std::ostream& out) {
  RunConfig cfg = resolve(o);
  if (o.seed) cfg.data.seed = *o.seed;
  const fs::path dir = prepare_out(o, cfg);
  const Dataset data = make_synthetic_dataset(cfg.data);
  save_dataset(data, dir.string());
  out << "wrote " << data.clips.size() << " clips from " << data.videos.size() << " videos to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.mode != "short" && o.mode != "long") throw ConfigError("--mode must be short or long, got " + o.mode);
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_out(o, cfg);
  const Dataset data = obtain_dataset(cfg);
  if (o.mode == "short") {
    Model<float> model(cfg.model, cfg.seed);
    MetricsFile metrics(dir / "metrics.jsonl");
    auto result = train_short(model, data, cfg.train, std::ref(metrics));
    const std::string path = (dir / "short.ckpt").string();
    save_checkpoint(path, model.config(), model.params());
    out << "trained " << result.steps << " steps; final loss " << result.step_losses.back() << "\n";
    if (!result.epoch_map.empty() && !std::isnan(result.epoch_map.back())) {
      out << "final epoch mAP " << result.epoch_map.back() << "\n";
    }
    out << "checkpoint " << path << "\n";
    return kExitOk;
  }
  // Long mode: both prerequisites must exist before anything else runs.
  const bool have_ckpt = !cfg.paths.checkpoint.empty() && fs::exists(cfg.paths.checkpoint);
  if (!have_ckpt) {
    throw ConfigError("short-term checkpoint not found" +
                      (cfg.paths.checkpoint.empty() ? std::string() : ": " + cfg.paths.checkpoint) +
                      " (run train --mode short first)");
  }
  Model<float> model = load_model(cfg, o.config);
  const Bank bank = load_bank(cfg, model.config());
  MetricsFile metrics(dir / "metrics.jsonl");
  auto result = train_long(model, data, bank, cfg.long_train, std::ref(metrics));
  const std::string path = (dir / "long.ckpt").string();
  save_checkpoint(path, model.config(), model.params());
  out << "trained " << result.steps << " steps; final loss " << result.step_losses.back() << "\n";
  out << "checkpoint " << path << "\n";
  return kExitOk;
}

int cmd_build_lrb(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_out(o, cfg);
  const Model<float> model = load_model(cfg, o.config);
  const Dataset data = obtain_dataset(cfg);
  std::vector<std::string> warnings;
  const Bank bank = build_model_bank(model, data, config_hash(model.config()), &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  const std::string path = (dir / "bank.lrb").string();
  bank.save(path);
  out << "bank entries " << bank.size() << "\n" << "bank " << path << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_out(o, cfg);
  const Model<float> model = load_model(cfg, o.config);
  const Dataset data = obtain_dataset(cfg);
  std::optional<Bank> bank;
  if (!cfg.paths.bank.empty()) bank = load_bank(cfg, model.config());
  const auto result = evaluate(model, data, cfg.eval_split, bank ? &*bank : nullptr);
  json report = report_json(result.report, data.class_names);
  report["split"] = cfg.eval_split;
  report["head"] = bank ? "long" : "short";
  io::write_file((dir / "eval_report.json").string(), report.dump(2) + "\n");
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_out(o, cfg);
  const Model<float> model = load_model(cfg, o.config);
  const Dataset data = obtain_dataset(cfg);
  std::optional<Bank> bank;
  if (!cfg.paths.bank.empty()) bank = load_bank(cfg, model.config());
  const std::size_t classes = model.config().num_classes;
  if (data.num_classes != classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, checkpoint has " +
                      std::to_string(classes));
  }
  std::ofstream file(dir / "detections.jsonl", std::ios::binary | std::ios::trunc);
  std::size_t count = 0;
  NoGradGuard no_grad;
  for (const ClipSample* clip : data.split(cfg.eval_split)) {
    const auto boxes = inference_boxes(*clip);
    if (boxes.empty()) continue;
    auto fwd = model.forward_short(clip->frames, boxes);
    Var<float> logits = fwd.logits;
    if (bank) {
      logits = model.forward_long(fwd.features,
                                  bank->window_query(clip->video_id, clip->keyframe_time_s, model.config().window));
    }
    for (std::size_t n = 0; n < boxes.size(); ++n) {
      const auto probs = classify({logits.value().ptr() + n * classes, classes});
      const auto& b = boxes[n];
      file << json{{"frame", clip->frame_id()},
                   {"box", {b.x1, b.y1, b.x2, b.y2}},
                   {"score", b.score},
                   {"probs", probs}}
                  .dump()
           << '\n';
      ++count;
    }
  }
  out << "wrote " << count << " detections to " << (dir / "detections.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_selftest(const Options& o, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(0);
  bool ok = true;
  for (const auto& suite : verify::run_selftest(seed)) {
    ok = ok && suite.passed();
    out << (suite.passed() ? "PASS " : "FAIL ") << suite.suite << " (" << suite.checks.size()
        << " checks, worst " << suite.worst() << ", " << suite.seconds << " s)\n";
    for (const auto& c : suite.checks) {
      if (!c.passed()) out << "    " << c.name << ": " << c.error << " > " << c.tolerance << "\n";
    }
  }
  out << (ok ? "selftest passed" : "selftest FAILED") << "\n";
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MRSN action-detection head: training, relation bank, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (JSON)");
    sub->add_option("--seed", o.seed, "Seed for model init and training shuffles");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--data", o.data, "Dataset directory (overrides paths.data)");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint (overrides paths.checkpoint)");
    sub->add_option("--bank", o.bank, "Relation bank file (overrides paths.bank)");
    sub->add_option("--split", o.split, "Split to evaluate (overrides eval_split)");
  };
  auto* train = app.add_subcommand("train", "Train the short-term model or the long-term head");
  common(train);
  train->add_option("--mode", o.mode, "short | long")->check(CLI::IsMember({"short", "long"}));
  auto* build = app.add_subcommand("build-lrb", "Build the long-term relation bank from a checkpoint");
  common(build);
  auto* eval = app.add_subcommand("eval", "Frame-mAP of a checkpoint on one split");
  common(eval);
  auto* infer = app.add_subcommand("infer", "Write per-box class probabilities");
  common(infer);
  auto* selftest = app.add_subcommand("selftest", "Gradient, attention, permutation, bank and mAP checks");
  common(selftest);
  auto* make_data = app.add_subcommand("make-data", "Generate the synthetic relational dataset");
  common(make_data);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (build->parsed()) return cmd_build_lrb(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (infer->parsed()) return cmd_infer(o, out);
    if (selftest->parsed()) return cmd_selftest(o, out);
    if (make_data->parsed()) return cmd_make_data(o, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const RangeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace mrsn
