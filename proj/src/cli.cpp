#include "dacsm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dacsm/checkpoint.hpp"
#include "dacsm/config.hpp"
#include "dacsm/verify.hpp"

namespace dacsm {

namespace {

using nlohmann::json;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << content;
  if (!f) throw DataError("write to " + path + " failed");
}

RunConfig assemble_config(const std::string& config_file, const std::vector<std::string>& sets,
                          bool seed_given, int seed, const std::string& out_dir) {
  RunConfig rc = config_file.empty() ? RunConfig::defaults() : RunConfig::from_file(config_file);
  for (const std::string& s : sets) rc.set_kv(s);
  if (seed_given) rc.set("seed", std::to_string(seed));
  if (!out_dir.empty()) rc.set("out_dir", out_dir);
  return rc;
}

json evaluation_json(const Evaluation& e) {
  json j;
  j["accuracy"] = e.accuracy;
  j["per_class"] = e.per_class;
  j["attention_entropy"] = e.mean_attention_entropy;
  return j;
}

int cmd_train(const RunConfig& rc, bool quiet, std::ostream& out) {
  const TrainConfig tc = rc.to_train_config();
  const SyntheticDomainSpec spec = rc.to_domain_spec();
  const DomainDataset data = generate_domains(spec);
  const std::string dir = rc.raw("out_dir");
  std::filesystem::create_directories(dir);

  const TrainResult res = train(tc, data, quiet ? nullptr : &out);

  write_file(dir + "/metrics.csv", metrics_csv(res.history, tc.model.classes));
  save_checkpoint(dir + "/checkpoint.json", res.model);

  const EpochRow& last = res.history.back();
  json s;
  s["seed"] = tc.seed;
  s["epochs"] = tc.epochs;
  s["final"]["target_accuracy"] = last.target_accuracy;
  s["final"]["per_class"] = last.per_class;
  s["final"]["a_distance"] = last.a_distance;
  s["final"]["attention_entropy"] = last.attention_entropy;
  if (last.has_loss) s["final"]["loss_total"] = last.mean_loss.total;
  write_file(dir + "/summary.json", s.dump(1) + "\n");

  out << "final target accuracy " << format_g17(last.target_accuracy) << ", a-distance "
      << format_g17(last.a_distance) << "\n";
  out << "wrote " << dir << "/metrics.csv, checkpoint.json, summary.json\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint, std::ostream& out) {
  const Model m = load_checkpoint(checkpoint);
  const SyntheticDomainSpec spec = rc.to_domain_spec();
  const DomainDataset data = generate_domains(spec);

  const Evaluation src = evaluate(m, data.source_images, data.source_labels);
  const Evaluation tgt = evaluate(m, data.target_images, data.target_hidden_labels);

  json e;
  e["checkpoint"] = checkpoint;
  e["source"] = evaluation_json(src);
  e["target"] = evaluation_json(tgt);
  e["a_distance"] = a_distance_proxy(src.features, tgt.features);
  const std::string text = e.dump(1) + "\n";

  const std::string dir = rc.raw("out_dir");
  std::filesystem::create_directories(dir);
  write_file(dir + "/eval.json", text);
  out << text;
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::ostream& out) {
  const std::vector<PropertyResult> results = verify_suite(suite);
  int failed = 0;
  for (const PropertyResult& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    if (!r.passed) ++failed;
  }
  out << (failed == 0 ? "verify ok" : "verify failed") << " (" << results.size() - failed << "/"
      << results.size() << " properties)\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"noise-regularized domain translation with cross-scale sub-center matching"};
  app.require_subcommand(1);

  std::string config_file, out_dir, checkpoint, suite = "all";
  std::vector<std::string> sets;
  int seed = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_file, "key = value configuration file");
    c->add_option("--set", sets, "single key=value override, repeatable");
    c->add_option("--seed", seed, "override the seed key");
    c->add_option("--out", out_dir, "override the out_dir key");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train on the synthetic two-domain benchmark");
  add_common(train_cmd);
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch progress lines");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the benchmark");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to load")->required();

  CLI::App* verify_cmd = app.add_subcommand("verify", "run the property verification suites");
  verify_cmd->add_option("--suite", suite, "all, appendix-a, appendix-b, appendix-c or gradients");

  CLI::App* keys_cmd = app.add_subcommand("keys", "print the configuration key reference");

  std::vector<const char*> argv;
  argv.push_back("dacsm");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (keys_cmd->parsed()) {
      out << RunConfig::describe_keys();
      return kExitOk;
    }
    if (verify_cmd->parsed()) return cmd_verify(suite, out);

    const bool seed_given = train_cmd->count("--seed") > 0 || eval_cmd->count("--seed") > 0;
    const RunConfig rc = assemble_config(config_file, sets, seed_given, seed, out_dir);
    if (train_cmd->parsed()) return cmd_train(rc, quiet, out);
    return cmd_eval(rc, checkpoint, out);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace dacsm
