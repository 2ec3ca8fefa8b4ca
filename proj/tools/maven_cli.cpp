// Command-line driver: data generation, stage training, encoding, budget
// reports and verification suites.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "maven/error.hpp"
#include "maven/pipeline.hpp"
#include "maven/tensor_io.hpp"
#include "maven/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace maven;

namespace {

/// One manifest per command, written to <out>/run_manifest.json.
class RunManifest {
 public:
  RunManifest(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {}

  void set_config(const std::string& path) { config_ = path; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void add_input(const fs::path& path) {
    if (fs::is_directory(path)) {
      for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) inputs_.push_back(e.path());
      }
    } else if (fs::exists(path)) {
      inputs_.push_back(path);
    }
  }
  void add_output(const fs::path& path) { outputs_.push_back(path); }
  void add_param(const std::string& key, json value) { params_[key] = std::move(value); }

  void write() const {
    json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = seed_;
    j["params"] = params_;
    j["input_hash"] = input_hash();
    json outs = json::array();
    std::vector<fs::path> sorted = outputs_;
    std::sort(sorted.begin(), sorted.end());
    for (const fs::path& p : sorted) {
      const std::string rel = fs::relative(p, out_).generic_string();
      outs.push_back({{"path", rel}, {"sha256", sha256_hex(read_file_bytes(p))}});
    }
    j["outputs"] = outs;
    const auto elapsed = std::chrono::steady_clock::now() - start_;
    j["duration_seconds"] = std::chrono::duration<double>(elapsed).count();
    fs::create_directories(out_);
    write_text_atomic(out_ / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  // sha256 over "path\0sha256\n" of every input file, in path order.
  std::string input_hash() const {
    std::vector<fs::path> sorted = inputs_;
    std::sort(sorted.begin(), sorted.end());
    std::string acc;
    for (const fs::path& p : sorted) {
      acc += p.filename().generic_string();
      acc += '\0';
      acc += sha256_hex(read_file_bytes(p));
      acc += '\n';
    }
    return sha256_hex(acc);
  }

  std::string command_;
  fs::path out_;
  std::string config_;
  std::uint64_t seed_ = 0;
  json params_ = json::object();
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ModelConfig geometry_config(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper_geometry();
  throw ConfigError("unknown geometry '" + name + "' (expected desk or paper)");
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void add_tree(RunManifest& manifest, const fs::path& dir) {
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") manifest.add_output(e.path());
  }
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::logic_error&) {
      throw ConfigError("bad alpha '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("no alphas given");
  return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "\n" : "") << values[i];
  os << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::size_t count = 64;
  std::uint64_t seed = 0;
  std::string out;
  std::string geometry = "desk";
};

int cmd_gen_data(const GenDataArgs& a) {
  RunManifest manifest("gen-data", a.out);
  manifest.set_seed(a.seed);
  manifest.add_param("count", a.count);
  manifest.add_param("geometry", a.geometry);
  const ModelConfig config = geometry_config(a.geometry);
  const std::size_t pool = std::min<std::size_t>(a.count, 8);
  const ToyCorpus corpus = build_toy_corpus(a.count, config.synth_config(), config.vocab(),
                                            Rng(a.seed).split("corpus"), {pool, pool, pool, pool, 3});
  for (const std::string& rel : write_corpus(a.out, corpus)) manifest.add_output(fs::path(a.out) / rel);
  manifest.write();
  std::cout << "wrote " << corpus.samples.size() << " samples to " << a.out << "\n";
  return 0;
}

struct CodebookArgs {
  std::size_t nv = 64;
  std::size_t iters = 25;
  std::uint64_t seed = 0;
  std::string out;
  std::string geometry = "desk";
};

int cmd_train_codebook(const CodebookArgs& a) {
  RunManifest manifest("train-codebook", a.out);
  manifest.set_seed(a.seed);
  manifest.add_param("nv", a.nv);
  manifest.add_param("iters", a.iters);
  ModelConfig config = geometry_config(a.geometry);
  config.codebook_size = a.nv;
  config.codebook_iterations = a.iters;
  MavenModel model = MavenModel::initialize(config, a.seed);
  save_checkpoint(a.out, make_checkpoint(model, 0, a.seed));
  write_tensor(fs::path(a.out) / "codebook.mvt", model.codebook().codewords());
  add_tree(manifest, a.out);
  manifest.write();
  std::cout << "codebook " << a.nv << "x" << config.encoder_dim << " written to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  int stage = 0;
  std::string config;
  std::string data;
  std::string in_ckpt;
  std::string out_ckpt;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t steps = 0;  // 0 keeps the config value
};

int cmd_train(const TrainArgs& a) {
  StageConfig cfg = a.config.empty() ? StageConfig::defaults(a.stage) : StageConfig::parse(read_text(a.config));
  if (!a.config.empty() && cfg.stage != a.stage) {
    throw ConfigError("--stage " + std::to_string(a.stage) + " disagrees with stage=" + std::to_string(cfg.stage) +
                      " in " + a.config);
  }
  if (!a.data.empty()) cfg.data = a.data;
  if (a.seed_given) cfg.seed = a.seed;
  if (a.steps) cfg.steps = a.steps;
  if (cfg.data.empty()) throw ConfigError("no dataset: pass --data or set data= in the config");

  const int prior = a.stage - 1;
  MavenModel model;
  std::uint64_t model_seed = cfg.seed;
  if (a.in_ckpt.empty() || !fs::exists(fs::path(a.in_ckpt) / "manifest.txt")) {
    if (a.stage > 1) {
      throw PreconditionError("stage " + std::to_string(a.stage) + " needs a stage " + std::to_string(prior) +
                              " checkpoint; none found at '" + a.in_ckpt + "'");
    }
    if (!a.in_ckpt.empty()) throw PreconditionError("no checkpoint at '" + a.in_ckpt + "'");
    model = MavenModel::initialize(ModelConfig::desk(), cfg.seed);
  } else {
    const Checkpoint in = load_checkpoint(a.in_ckpt);
    if (in.stage != prior) {
      throw PreconditionError("stage " + std::to_string(a.stage) + " needs a stage " + std::to_string(prior) +
                              " checkpoint; '" + a.in_ckpt + "' holds stage " + std::to_string(in.stage));
    }
    model = restore_model(in);
    model_seed = in.seed;
  }

  RunManifest manifest("train", a.out_ckpt);
  manifest.set_config(a.config);
  manifest.set_seed(cfg.seed);
  manifest.add_param("stage", a.stage);
  manifest.add_param("steps", cfg.steps);
  manifest.add_param("lr", cfg.lr);
  manifest.add_param("batch", cfg.batch);
  manifest.add_input(cfg.data);
  if (!a.in_ckpt.empty()) manifest.add_input(a.in_ckpt);
  if (!a.config.empty()) manifest.add_input(a.config);

  const ToyCorpus corpus = read_corpus(cfg.data);
  const StageReport report = run_stage(model, corpus, cfg);
  save_checkpoint(a.out_ckpt, make_checkpoint(model, a.stage, model_seed));

  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < report.loss_trace.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i, report.loss_trace[i]);
    csv += line;
  }
  const fs::path out(a.out_ckpt);
  write_text_atomic(out / "loss.csv", csv);
  write_text_atomic(out / "stage_config.txt", cfg.to_text());
  json summary;
  summary["stage"] = report.stage;
  summary["loss"] = loss_kind_name(report.loss);
  summary["examples"] = report.examples;
  summary["initial_loss"] = report.initial_loss;
  summary["final_loss"] = report.final_loss;
  if (report.stage == 1) summary["heldout_accuracy"] = report.heldout_accuracy;
  summary["changed"] = report.changed;
  if (report.stage == 4) {
    const AttentionReport att = attention_report(model, corpus);
    write_attention_export(out / "attention", att.hybrid);
    summary["text_to_discrete_mass"] = att.text_to_discrete;
    summary["continuous_only_text_to_continuous_mass"] = att.text_to_continuous;
  }
  write_text_atomic(out / "report.json", summary.dump(2) + "\n");
  add_tree(manifest, out);
  manifest.write();
  std::cout << summary.dump() << "\n";
  return 0;
}

struct EncodeArgs {
  std::string images;
  double alpha = 0.25;
  std::string ckpt;
  std::string out;
  std::string geometry = "desk";
  std::size_t count = 1;
  std::uint64_t seed = 0;
};

int cmd_encode(const EncodeArgs& a) {
  if (!(a.alpha > 0.0 && a.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1], got " + std::to_string(a.alpha));
  RunManifest manifest("encode", a.out);
  manifest.set_seed(a.seed);
  manifest.add_param("alpha", a.alpha);
  MavenModel model;
  if (!a.ckpt.empty()) {
    model = restore_model(load_checkpoint(a.ckpt));
    manifest.add_input(a.ckpt);
  } else {
    model = MavenModel::initialize(geometry_config(a.geometry), a.seed);
  }
  const ModelConfig& config = model.config();

  std::vector<std::pair<std::string, ImageGrid>> images;
  if (!a.images.empty()) {
    manifest.add_input(a.images);
    std::vector<fs::path> files;
    if (fs::is_directory(a.images)) {
      for (const auto& e : fs::recursive_directory_iterator(a.images)) {
        if (e.is_regular_file() && e.path().extension() == ".mvt") files.push_back(e.path());
      }
    } else {
      files.push_back(a.images);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .mvt images under " + a.images);
    for (const fs::path& f : files) images.emplace_back(f.stem().string(), ImageGrid::from_tensor(read_tensor(f)));
  } else {
    const auto samples = synth_masks(a.count, config.synth_config(), Rng(a.seed).split("encode.images"));
    for (std::size_t i = 0; i < samples.size(); ++i) images.emplace_back("synth" + std::to_string(i), samples[i].image);
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  for (const auto& [id, image] : images) {
    if (image.width != config.geometry.width || image.height != config.geometry.height) {
      throw DataError("image '" + id + "' is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      ", the checkpoint expects " + std::to_string(config.geometry.width) + "x" +
                      std::to_string(config.geometry.height));
    }
    const auto encoded = model.encode_image(image, id);
    const auto scores = model.scores(encoded);
    const ReducedSequence reduced = select_top_m(encoded.continuous, scores, a.alpha);
    const HybridSequence block =
        assemble_image_block(reduced, encoded.discrete, model.projector(), model.lm().embedding(), model.vocab());
    write_text_atomic(out / (id + ".kept.txt"), join(reduced.kept_positions));
    write_text_atomic(out / (id + ".scores.txt"), join(scores));
    write_text_atomic(out / (id + ".discrete.txt"), join(encoded.discrete.indices));
    write_text_atomic(out / (id + ".tags.txt"), block.tag_string() + "\n");
    write_tensor(out / (id + ".hybrid.mvt"), block.embedded);
  }
  const BudgetReport budget = budget_report(config.geometry, a.alpha, images.size());
  write_text_atomic(out / "budget.jsonl", budget.to_json_line() + "\n");
  add_tree(manifest, out);
  manifest.write();
  std::cout << budget.to_json_line() << "\n";
  return 0;
}

struct ReportArgs {
  std::string alphas = "0.1,0.25,0.5,0.75,1.0";
  std::string geometry = "paper";
  std::size_t images = 1;
  std::size_t text_len = 0;
  std::string out = ".";
};

int cmd_report(const ReportArgs& a) {
  RunManifest manifest("report", a.out);
  manifest.add_param("alphas", a.alphas);
  manifest.add_param("geometry", a.geometry);
  const auto alphas = parse_alphas(a.alphas);
  const Geometry geometry = geometry_config(a.geometry).geometry;
  std::string lines;
  for (const BudgetReport& r : budget_report(geometry, alphas, a.images, a.text_len)) lines += r.to_json_line() + "\n";
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / "budget.jsonl";
  write_text_atomic(path, lines);
  manifest.add_output(path);
  manifest.write();
  std::cout << lines;
  return 0;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string out = ".";
};

int cmd_verify(const VerifyArgs& a) {
  RunManifest manifest("verify", a.out);
  manifest.set_seed(a.seed);
  manifest.add_param("suite", a.suite);
  const json summary = summarize(run_suite(a.suite, a.seed));
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / ("verify_" + a.suite + ".json");
  write_text_atomic(path, summary.dump(2) + "\n");
  manifest.add_output(path);
  manifest.write();
  std::cout << summary.dump() << "\n";
  return summary["passed"].get<bool>() ? 0 : static_cast<int>(ExitCode::kInvariant);
}

struct RunAllArgs {
  std::string data;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t steps = 0;
};

int cmd_run_all(const RunAllArgs& a) {
  RunManifest manifest("run-all", a.out);
  manifest.set_seed(a.seed);
  manifest.add_input(a.data);
  const ToyCorpus corpus = read_corpus(a.data);
  auto configs = default_stage_configs(a.seed);
  for (auto& c : configs) {
    c.data = a.data;
    if (a.steps) c.steps = a.steps;
  }
  const RunAllResult run = run_all(a.seed, ModelConfig::desk(), corpus, configs);
  const fs::path out(a.out);
  json stages = json::array();
  for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
    const fs::path dir = out / ("stage" + std::to_string(i + 1));
    save_checkpoint(dir, run.checkpoints[i]);
    const StageReport& r = run.reports[i];
    std::string csv = "step,loss\n";
    for (std::size_t s = 0; s < r.loss_trace.size(); ++s) {
      char line[64];
      std::snprintf(line, sizeof line, "%zu,%.17g\n", s, r.loss_trace[s]);
      csv += line;
    }
    write_text_atomic(dir / "loss.csv", csv);
    stages.push_back({{"stage", r.stage}, {"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}});
  }
  write_text_atomic(out / "report.json", stages.dump(2) + "\n");
  add_tree(manifest, out);
  manifest.write();
  std::cout << stages.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid discrete/continuous visual encoding toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic images, masks and stage corpora");
  gen_cmd->add_option("--count", gen.count, "Number of image/mask pairs")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Dataset directory")->required();
  gen_cmd->add_option("--geometry", gen.geometry, "desk or paper")->capture_default_str();

  CodebookArgs cb;
  auto* cb_cmd = app.add_subcommand("train-codebook", "Fit the discrete codebook and write an initial checkpoint");
  cb_cmd->add_option("--nv", cb.nv, "Codebook size")->capture_default_str();
  cb_cmd->add_option("--iters", cb.iters, "k-means iterations")->capture_default_str();
  cb_cmd->add_option("--seed", cb.seed)->capture_default_str();
  cb_cmd->add_option("--out", cb.out, "Checkpoint directory")->required();
  cb_cmd->add_option("--geometry", cb.geometry, "desk or paper")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--stage", train.stage)->required()->check(CLI::Range(1, 4));
  train_cmd->add_option("--config", train.config, "key=value stage config file");
  train_cmd->add_option("--data", train.data, "Dataset directory from gen-data");
  train_cmd->add_option("--in-ckpt", train.in_ckpt, "Checkpoint of the previous stage");
  train_cmd->add_option("--out-ckpt", train.out_ckpt)->required();
  auto* seed_opt = train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--steps", train.steps, "Override the configured step count");

  EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "Encode images into hybrid token blocks");
  enc_cmd->add_option("--images", enc.images, "MVT1 image file or directory");
  enc_cmd->add_option("--alpha", enc.alpha, "Keeping ratio")->capture_default_str();
  enc_cmd->add_option("--ckpt", enc.ckpt, "Checkpoint directory");
  enc_cmd->add_option("--out", enc.out)->required();
  enc_cmd->add_option("--geometry", enc.geometry, "Geometry when no checkpoint is given")->capture_default_str();
  enc_cmd->add_option("--count", enc.count, "Synthetic images when --images is absent")->capture_default_str();
  enc_cmd->add_option("--seed", enc.seed)->capture_default_str();

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Token budget per keeping ratio as JSON lines");
  rep_cmd->add_option("--alphas", rep.alphas)->capture_default_str();
  rep_cmd->add_option("--geometry", rep.geometry, "desk or paper")->capture_default_str();
  rep_cmd->add_option("--images", rep.images)->capture_default_str();
  rep_cmd->add_option("--text-len", rep.text_len)->capture_default_str();
  rep_cmd->add_option("--out", rep.out)->capture_default_str();

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify", "Run invariant suites");
  ver_cmd->add_option("--suite", ver.suite, "grad, freeze, oracle, budget or all")->capture_default_str();
  ver_cmd->add_option("--seed", ver.seed)->capture_default_str();
  ver_cmd->add_option("--out", ver.out)->capture_default_str();

  RunAllArgs all;
  auto* all_cmd = app.add_subcommand("run-all", "Run stages 1-4 in order from one seed");
  all_cmd->add_option("--data", all.data)->required();
  all_cmd->add_option("--seed", all.seed)->capture_default_str();
  all_cmd->add_option("--out", all.out)->required();
  all_cmd->add_option("--steps", all.steps, "Override every stage's step count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*cb_cmd) return cmd_train_codebook(cb);
    if (*train_cmd) {
      train.seed_given = seed_opt->count() > 0;
      return cmd_train(train);
    }
    if (*enc_cmd) return cmd_encode(enc);
    if (*rep_cmd) return cmd_report(rep);
    if (*ver_cmd) return cmd_verify(ver);
    if (*all_cmd) return cmd_run_all(all);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInvariant);
  }
  return 0;
}
