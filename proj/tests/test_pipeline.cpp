#include <doctest.h>

#include <fstream>

#include "maven/error.hpp"
#include "maven/pipeline.hpp"
#include "maven/tensor_io.hpp"
#include "support.hpp"

using namespace maven;

namespace {

ToyCorpus small_corpus(std::uint64_t seed = 0) {
  const ModelConfig config = ModelConfig::desk();
  return build_toy_corpus(12, config.synth_config(), config.vocab(), Rng(seed).split("corpus"), {4, 4, 4, 4, 3});
}

std::vector<StageConfig> short_stages(std::uint64_t seed, std::size_t steps) {
  std::vector<StageConfig> stages = default_stage_configs(seed);
  for (StageConfig& s : stages) s.steps = steps;
  return stages;
}

const RunAllResult& shared_run() {
  static const RunAllResult run = [] {
    const ToyCorpus corpus = small_corpus();
    const auto stages = short_stages(0, 40);
    return run_all(0, ModelConfig::desk(), corpus, stages);
  }();
  return run;
}

}  // namespace

TEST_CASE("stage trainable sets") {
  CHECK(stage_trainable(1, "selector.layer1.weight"));
  CHECK_FALSE(stage_trainable(1, "projector.fc1.weight"));
  CHECK(stage_trainable(2, "lm.embedding"));
  CHECK_FALSE(stage_trainable(2, "lm.positions"));
  CHECK(stage_trainable(3, "projector.fc2.bias"));
  CHECK_FALSE(stage_trainable(3, "lm.embedding"));
  CHECK(stage_trainable(4, "lm.blocks.0.query.weight"));
  CHECK(stage_trainable(4, "projector.fc1.weight"));
  CHECK(stage_trainable(4, "lm.embedding"));
  CHECK_FALSE(stage_trainable(4, "encoder.patch_embed.weight"));
  CHECK_FALSE(stage_trainable(4, "selector.layer3.bias"));
  CHECK_FALSE(stage_trainable(4, "tokenizer.codebook"));
  CHECK_THROWS_AS(stage_trainable(5, "x"), ConfigError);

  // Every model parameter is trainable in at most stage 4 plus one earlier stage,
  // and the encoder and codebook are never trainable.
  MavenModel model = MavenModel::initialize(ModelConfig::desk(), 0, false);
  for (Parameter* p : model.parameters()) {
    int count = 0;
    for (int s = 1; s <= 3; ++s) count += stage_trainable(s, p->name) ? 1 : 0;
    CHECK(count <= 1);
    if (p->name.starts_with("encoder.") || p->name == "tokenizer.codebook") {
      for (int s = 1; s <= 4; ++s) CHECK_FALSE(stage_trainable(s, p->name));
    }
  }
}

TEST_CASE("stage config parsing") {
  const StageConfig c = StageConfig::parse("stage=3\nsteps=12\nlr=0.01\n# comment\nbatch=2\nseed=9\n");
  CHECK(c.stage == 3);
  CHECK(c.steps == 12);
  CHECK(c.lr == 0.01);
  CHECK(c.batch == 2);
  CHECK(c.seed == 9);
  CHECK(c.loss_kind() == LossKind::kContinuousCaption);
  const StageConfig round = StageConfig::parse(c.to_text());
  CHECK(round.to_text() == c.to_text());
  CHECK(StageConfig::parse("stage=2\n").steps == StageConfig::defaults(2).steps);
  CHECK_THROWS_AS(StageConfig::parse("steps=3\n"), ConfigError);
  CHECK_THROWS_AS(StageConfig::parse("stage=2\nbogus=1\n"), ConfigError);
  CHECK_THROWS_AS(StageConfig::parse("stage=2\nsteps=abc\n"), ConfigError);
  CHECK_THROWS_AS(StageConfig::parse("stage=7\n"), ConfigError);
  StageConfig bad = StageConfig::defaults(1);
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("run_all rejects out-of-order stages") {
  const ToyCorpus corpus = small_corpus();
  auto stages = short_stages(0, 1);
  std::swap(stages[1], stages[2]);
  CHECK_THROWS_AS(run_all(0, ModelConfig::desk(), corpus, stages), ConfigError);
  stages = short_stages(0, 1);
  stages.pop_back();
  CHECK_THROWS_AS(run_all(0, ModelConfig::desk(), corpus, stages), ConfigError);
}

TEST_CASE("each stage changes only its trainable parameters") {
  const RunAllResult& run = shared_run();
  REQUIRE(run.reports.size() == 4);
  for (const StageReport& r : run.reports) {
    INFO("stage " << r.stage);
    CHECK(r.loss_trace.size() == 40);
    CHECK_FALSE(r.changed.empty());
    for (const auto& [name, hash] : r.before) {
      if (!stage_trainable(r.stage, name)) CHECK(r.after.at(name) == hash);
    }
    for (const std::string& name : r.changed) CHECK(stage_trainable(r.stage, name));
  }
  CHECK(run.checkpoints.size() == 4);
  CHECK(run.checkpoints.back().stage == 4);
  CHECK(run.final_checkpoint.manifest == run.checkpoints.back().manifest);
}

TEST_CASE("a stage that touches a frozen parameter is rejected") {
  // new_rows_only masks the base text rows; the full table is trainable, so
  // this is the positive control: base rows move without it.
  MavenModel model = MavenModel::initialize(ModelConfig::desk(), 1);
  const ToyCorpus corpus = small_corpus(1);
  StageConfig cfg = StageConfig::defaults(2);
  cfg.steps = 5;
  cfg.new_rows_only = true;
  const Tensor before = model.lm().embedding().weights.value;
  run_stage2(model, corpus, cfg);
  const Tensor& after = model.lm().embedding().weights.value;
  const std::size_t n = model.vocab().text_size;
  CHECK(after.slice_rows(0, n) == before.slice_rows(0, n));
  CHECK_FALSE(after.slice_rows(n, after.rows()) == before.slice_rows(n, before.rows()));
}

TEST_CASE("stage sequences carry the expected segment tags") {
  const MavenModel model = MavenModel::initialize(ModelConfig::desk(), 2);
  const ToyCorpus corpus = small_corpus(2);
  const auto s2 = stage2_sequences(model, corpus);
  CHECK(s2.size() == 2 * corpus.stage2.size());
  for (const HybridSequence& s : s2) {
    CHECK(s.tag_string().find('C') == std::string::npos);
    CHECK(s.tag_string().find('D') != std::string::npos);
    CHECK(s.token_ids.back() == model.vocab().eos_id());
  }
  const auto s3 = stage3_sequences(model, corpus);
  CHECK(s3.size() == corpus.stage3.size());
  for (const HybridSequence& s : s3) {
    CHECK(s.tag_string().find('D') == std::string::npos);
    CHECK(s.tag_string().front() == 'C');
    CHECK(s.target_count() >= 1);
  }
}

TEST_CASE("instruction prefix and generation on two images") {
  const MavenModel model = MavenModel::initialize(ModelConfig::desk(), 3);
  const ToyCorpus corpus = small_corpus(3);
  const std::vector<ImageGrid> images = {corpus.samples[0].image, corpus.samples[1].image};
  const std::vector<std::size_t> instruction = {words::kWhere};
  const HybridSequence prefix = instruction_prefix(model, images, instruction);
  const std::size_t m = keep_count(model.config().geometry.continuous_len(), model.config().keep_ratio);
  const std::size_t nd = model.config().geometry.discrete_len;
  const std::string block = std::string(m, 'C') + std::string(nd, 'D');
  CHECK(prefix.tag_string() == block + "T" + block + "TT");
  CHECK(prefix.spans.size() == 2);
  CHECK(instruction_prefix(model, images, instruction, false).tag_string() ==
        std::string(m, 'C') + "T" + std::string(m, 'C') + "TT");
  const auto out = generate_response(model, images, instruction, 4);
  CHECK(out.size() <= 4);
  for (std::size_t id : out) CHECK(id < model.vocab().unified_size());
  CHECK(generate_response(model, images, instruction, 4) == out);
}

TEST_CASE("attention report after training") {
  const RunAllResult& run = shared_run();
  const MavenModel model = restore_model(run.final_checkpoint);
  const AttentionReport r = attention_report(model, small_corpus(), 0);
  CHECK(r.text_to_discrete >= 0.0);
  CHECK(r.text_to_discrete <= 1.0);
  CHECK(r.text_to_continuous >= 0.0);
  CHECK(r.text_to_continuous <= 1.0);
  CHECK(r.hybrid.matrix.rows() == r.hybrid.tags.size());
}

TEST_CASE("checkpoint round trip and tamper detection") {
  const RunAllResult& run = shared_run();
  const auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(dir / "stage4", run.final_checkpoint);
  const Checkpoint back = load_checkpoint(dir / "stage4");
  CHECK(back.stage == 4);
  CHECK(back.manifest == run.final_checkpoint.manifest);
  MavenModel restored = restore_model(back);
  MavenModel original = restore_model(run.final_checkpoint);
  CHECK(make_checkpoint(restored, 4, 0).manifest == make_checkpoint(original, 4, 0).manifest);

  const auto target = dir / "stage4" / "params" / "lm.embedding.mvt";
  REQUIRE(std::filesystem::exists(target));
  auto bytes = read_file_bytes(target);
  bytes[bytes.size() - 2] ^= 0x01;
  write_file_atomic(target, bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "stage4"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), PreconditionError);
}

TEST_CASE("corpus files round trip") {
  const ToyCorpus corpus = small_corpus(4);
  const auto dir = testing::scratch_dir("corpus");
  const auto files = write_corpus(dir, corpus);
  CHECK(std::is_sorted(files.begin(), files.end()));
  const ToyCorpus back = read_corpus(dir);
  REQUIRE(back.samples.size() == corpus.samples.size());
  CHECK(back.samples[3].mask.data == corpus.samples[3].mask.data);
  CHECK(max_abs_diff(back.samples[3].image.pixels, corpus.samples[3].image.pixels) < 1e-7);
  CHECK(back.stage2.size() == corpus.stage2.size());
  CHECK(back.stage3[1].text == corpus.stage3[1].text);
  CHECK(back.stage4[2].images == corpus.stage4[2].images);
  CHECK(back.stage4[2].response == corpus.stage4[2].response);
  for (const InstructionSample& s : corpus.stage4) {
    REQUIRE(s.response.size() == s.images.size());
    for (std::size_t k = 0; k < s.images.size(); ++k) {
      const SynthSample& img = corpus.samples[s.images[k]];
      CHECK(s.response[k] == quadrant_word(img.rect, corpus.synth.width, corpus.synth.height));
    }
  }
  CHECK_THROWS_AS(read_corpus(dir / "nope"), PreconditionError);
}

TEST_CASE("quadrant words") {
  CHECK(quadrant_word(Rect{0, 0, 6, 6}, 32, 32) == words::kTopLeft);
  CHECK(quadrant_word(Rect{20, 2, 6, 6}, 32, 32) == words::kTopRight);
  CHECK(quadrant_word(Rect{2, 20, 6, 6}, 32, 32) == words::kBottomLeft);
  CHECK(quadrant_word(Rect{20, 20, 6, 6}, 32, 32) == words::kBottomRight);
  CHECK(quadrant_word(Rect{13, 13, 6, 6}, 32, 32) == words::kBottomRight);  // centre at 16 goes right/down
}

TEST_CASE("shipped stage configs parse") {
  const std::filesystem::path dir = MAVEN_SOURCE_DIR "/configs";
  for (int s = 1; s <= 4; ++s) {
    std::ifstream in(dir / ("stage" + std::to_string(s) + ".txt"));
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const StageConfig c = StageConfig::parse(text);
    CHECK(c.stage == s);
    CHECK(c.steps == StageConfig::defaults(s).steps);
    CHECK(c.lr == StageConfig::defaults(s).lr);
    CHECK(c.batch == StageConfig::defaults(s).batch);
  }
  std::ifstream in(dir / "paper_stage4.txt");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const StageConfig paper = StageConfig::parse(text);
  CHECK(paper.stage == 4);
  CHECK(paper.lr == 2e-5);
  CHECK(paper.batch == 256);
}
