#include "maven/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "maven/error.hpp"
#include "maven/ops.hpp"

namespace maven {

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSelectorBce: return "selector-bce";
    case LossKind::kDiscreteAutoregressive: return "discrete-autoregressive";
    case LossKind::kContinuousCaption: return "continuous-caption";
    case LossKind::kFullInstruction: return "full-instruction";
  }
  return "?";
}

bool stage_trainable(int stage, std::string_view name) {
  auto starts = [&](std::string_view prefix) { return name.substr(0, prefix.size()) == prefix; };
  switch (stage) {
    case 1: return starts("selector.");
    case 2: return name == "lm.embedding";
    case 3: return starts("projector.");
    case 4: return !starts("encoder.") && !starts("selector.") && name != "tokenizer.codebook";
    default: throw ConfigError("unknown stage " + std::to_string(stage));
  }
}

// ---------------------------------------------------------------------------
// StageConfig

StageConfig StageConfig::defaults(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1: c.steps = 300; break;
    case 2: c.steps = 1000; break;
    case 3: c.steps = 300; break;
    case 4: c.steps = 300; break;
    default: throw ConfigError("stage must be 1-4, got " + std::to_string(stage));
  }
  return c;
}

StageConfig StageConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int stage = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("stage config line without '=': " + line);
    entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    if (entries.back().first == "stage") {
      try {
        stage = std::stoi(entries.back().second);
      } catch (const std::logic_error&) {
        throw ConfigError("bad stage value: " + entries.back().second);
      }
    }
  }
  if (stage == 0) throw ConfigError("stage config has no 'stage' key");
  StageConfig c = defaults(stage);
  for (const auto& [key, value] : entries) {
    try {
      if (key == "stage") continue;
      if (key == "steps") c.steps = std::stoul(value);
      else if (key == "lr") c.lr = std::stod(value);
      else if (key == "batch") c.batch = std::stoul(value);
      else if (key == "data") c.data = value;
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "new_rows_only") c.new_rows_only = value == "1" || value == "true";
      else if (key == "holdout") c.holdout = std::stod(value);
      else throw ConfigError("unknown stage config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for '" + key + "': " + value);
    }
  }
  c.validate();
  return c;
}

std::string StageConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "stage=" << stage << "\nsteps=" << steps << "\nlr=" << lr << "\nbatch=" << batch << "\ndata=" << data
     << "\nseed=" << seed << "\nnew_rows_only=" << (new_rows_only ? 1 : 0) << "\nholdout=" << holdout << "\n";
  return os.str();
}

LossKind StageConfig::loss_kind() const {
  switch (stage) {
    case 1: return LossKind::kSelectorBce;
    case 2: return LossKind::kDiscreteAutoregressive;
    case 3: return LossKind::kContinuousCaption;
    case 4: return LossKind::kFullInstruction;
    default: throw ConfigError("unknown stage " + std::to_string(stage));
  }
}

void StageConfig::validate() const {
  if (stage < 1 || stage > 4) throw ConfigError("stage must be 1-4, got " + std::to_string(stage));
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Stage plumbing

namespace {

/// Sets trainable flags for the stage and audits the freeze contract.
class StageScope {
 public:
  StageScope(MavenModel& model, const StageConfig& config, StageReport& report)
      : model_(model), config_(config), report_(report) {
    config_.validate();
    report_.stage = config_.stage;
    report_.loss = config_.loss_kind();
    for (Parameter* p : model_.parameters()) p->trainable = config_.trainable(p->name);
    report_.before = model_.checksums();
  }

  void finish() {
    report_.after = model_.checksums();
    for (const auto& [name, hash] : report_.before) {
      if (report_.after.at(name) == hash) continue;
      if (!config_.trainable(name)) {
        throw InvariantError("stage " + std::to_string(config_.stage) + " modified frozen parameter '" + name + "'");
      }
      report_.changed.push_back(name);
    }
  }

 private:
  MavenModel& model_;
  const StageConfig& config_;
  StageReport& report_;
};

void check_finite(const ParamRefs& params, int stage, std::size_t step) {
  for (const Parameter* p : params) {
    if (p->trainable && !p->value.all_finite()) {
      throw InvariantError("parameter '" + p->name + "' became non-finite at step " + std::to_string(step) +
                           " of stage " + std::to_string(stage));
    }
  }
}

/// Cycles through a fresh seeded permutation of [0, n) each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng rng) : order_(n), rng_(rng) { reshuffle(); }

  std::size_t next() {
    if (cursor_ == order_.size()) reshuffle();
    return order_[cursor_++];
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

using ExampleFn = std::function<double(std::size_t)>;

double dataset_loss(std::size_t n, const ExampleFn& loss) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += loss(i);
  return total / static_cast<double>(n);
}

/// Minibatch AdamW over `n` examples. `loss_and_grad` accumulates gradients
/// of one example's loss; they are averaged over the batch before the update.
void optimize(MavenModel& model, const StageConfig& config, std::size_t n, const ExampleFn& loss_and_grad,
              StageReport& report, const std::function<void()>& before_update = {}) {
  const ParamRefs params = model.parameters();
  AdamWState state;
  const AdamWConfig opt{.lr = config.lr};
  BatchSampler sampler(n, Rng(config.seed).split("stage" + std::to_string(config.stage) + ".batches"));
  const std::size_t batch = std::min(config.batch, n);
  for (std::size_t step = 0; step < config.steps; ++step) {
    zero_grads(params);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) loss += loss_and_grad(sampler.next());
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw InvariantError("stage " + std::to_string(config.stage) + " loss became non-finite at step " +
                           std::to_string(step));
    }
    const double scale = 1.0 / static_cast<double>(batch);
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      for (double& g : p->grad.values()) g *= scale;
    }
    if (before_update) before_update();
    adamw_step(params, state, opt);
    check_finite(params, config.stage, step);
    report.loss_trace.push_back(loss);
  }
}

std::string image_name(std::size_t index) { return "img" + std::to_string(index); }

std::vector<MavenModel::EncodedImage> encode_all(const MavenModel& model, const ToyCorpus& corpus,
                                                 std::span<const std::size_t> images) {
  std::vector<MavenModel::EncodedImage> out;
  for (std::size_t i : images) {
    if (i >= corpus.samples.size()) throw DataError("corpus references missing image " + std::to_string(i));
    out.push_back(model.encode_image(corpus.samples[i].image, image_name(i)));
  }
  return out;
}

std::vector<std::size_t> with_eos(std::vector<std::size_t> ids, const UnifiedVocab& vocab) {
  ids.push_back(vocab.eos_id());
  return ids;
}

std::vector<std::vector<std::size_t>> stage2_ids(const MavenModel& model, const ToyCorpus& corpus) {
  std::vector<std::size_t> images;
  for (const auto& p : corpus.stage2) images.push_back(p.image);
  const auto encoded = encode_all(model, corpus, images);
  const UnifiedVocab& vocab = model.vocab();
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < corpus.stage2.size(); ++i) {
    const auto visual = to_unified(encoded[i].discrete.indices, vocab);
    const auto& text = corpus.stage2[i].text;
    std::vector<std::size_t> forward(text.begin(), text.end());
    forward.insert(forward.end(), visual.begin(), visual.end());
    std::vector<std::size_t> backward(visual.begin(), visual.end());
    backward.insert(backward.end(), text.begin(), text.end());
    out.push_back(with_eos(std::move(forward), vocab));
    out.push_back(with_eos(std::move(backward), vocab));
  }
  return out;
}

struct CaptionExample {
  MavenModel::EncodedImage encoded;
  std::vector<std::size_t> caption;
};

/// [C…C caption] with loss on the caption only. No EOS follows: with the LM
/// frozen, what comes after a text token is out of the projector's reach.
HybridSequence caption_sequence(const MavenModel& model, const CaptionExample& ex, Projector::Cache* cache) {
  const ReducedSequence reduced = model.reduce(ex.encoded, model.config().keep_ratio);
  const Tensor projected = model.projector().forward(reduced.tokens, cache);
  const HybridSequence parts[2] = {assemble_continuous_block(reduced, projected),
                                   HybridSequence::from_tokens(ex.caption, model.lm().embedding(), model.vocab())};
  HybridSequence seq = concat_sequences(parts);
  seq.validate();
  return seq;
}

struct InstructionExample {
  std::vector<MavenModel::EncodedImage> encoded;
  std::vector<std::size_t> instruction;
  std::vector<std::size_t> response;  // with EOS
};

/// Images, instruction and (optionally) response, with loss on the response.
HybridSequence instruction_sequence(const MavenModel& model, std::span<const MavenModel::EncodedImage> images,
                                    std::span<const std::size_t> instruction, std::span<const std::size_t> response,
                                    bool include_discrete, std::vector<Projector::Cache>* caches) {
  const UnifiedVocab& vocab = model.vocab();
  const EmbeddingTable& table = model.lm().embedding();
  MultimodalInput input;
  std::vector<HybridSequence> blocks;
  if (caches) caches->assign(images.size(), {});
  for (std::size_t k = 0; k < images.size(); ++k) {
    const ReducedSequence reduced = model.reduce(images[k], model.config().keep_ratio);
    const Tensor projected = model.projector().forward(reduced.tokens, caches ? &(*caches)[k] : nullptr);
    blocks.push_back(include_discrete
                         ? assemble_image_block(reduced, images[k].discrete, projected, table, vocab)
                         : assemble_continuous_block(reduced, projected));
    input.image_ids.push_back(images[k].continuous.image_id);
    input.plan.push_back({MultimodalInput::Kind::kImage, k});
  }
  input.text_segments.emplace_back(instruction.begin(), instruction.end());
  input.plan.push_back({MultimodalInput::Kind::kText, 0});
  if (!response.empty()) {
    input.text_segments.emplace_back(response.begin(), response.end());
    input.plan.push_back({MultimodalInput::Kind::kText, 1});
  }
  HybridSequence seq = interleave(input, blocks, table, vocab, {.separators = true});
  seq.keep_targets_in(seq.length() - response.size(), seq.length());
  return seq;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

StageReport run_stage1(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config) {
  StageReport report;
  StageScope scope(model, config, report);
  if (corpus.samples.empty()) throw DataError("stage 1 needs at least one image/mask pair");
  const std::size_t p = model.config().geometry.patch;
  std::vector<SelectorExample> examples;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const SynthSample& s = corpus.samples[i];
    auto encoded = model.encode_image(s.image, image_name(i));
    const PatchLabels labels = patch_labels(s.mask, s.image, p);
    SelectorExample ex{std::move(encoded.continuous), model.eos(encoded.discrete), {}};
    ex.labels.assign(labels.labels.begin(), labels.labels.end());
    examples.push_back(std::move(ex));
  }
  const std::size_t held = static_cast<std::size_t>(std::floor(config.holdout * static_cast<double>(examples.size())));
  const std::size_t train_n = std::max<std::size_t>(1, examples.size() - held);
  const std::span<const SelectorExample> train(examples.data(), train_n);
  const std::span<const SelectorExample> test(examples.data() + train_n, examples.size() - train_n);
  report.examples = train_n;

  auto full_loss = [&](std::span<const SelectorExample> data) {
    std::vector<Tensor> feats;
    std::vector<double> labels;
    for (const auto& ex : data) {
      feats.push_back(selector_features(project_continuous(ex.sequence, model.projector()), ex.eos.vector));
      labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
    }
    return bce_with_logits(model.selector().logits(concat_rows(feats)), labels).loss;
  };
  report.initial_loss = full_loss(train);
  SelectorTrainConfig tc;
  tc.steps = config.steps;
  tc.batch = config.batch;
  tc.optimizer.lr = config.lr;
  report.loss_trace = train_selector(train, model.projector(), model.selector(), tc).loss_trace;
  check_finite(model.parameters(), 1, config.steps);
  report.final_loss = full_loss(train);
  report.heldout_accuracy = selector_accuracy(test.empty() ? train : test, model.projector(), model.selector());
  scope.finish();
  return report;
}

std::vector<HybridSequence> stage2_sequences(const MavenModel& model, const ToyCorpus& corpus) {
  std::vector<HybridSequence> out;
  for (const auto& ids : stage2_ids(model, corpus)) {
    out.push_back(HybridSequence::from_tokens(ids, model.lm().embedding(), model.vocab()));
  }
  return out;
}

StageReport run_stage2(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config) {
  StageReport report;
  StageScope scope(model, config, report);
  if (corpus.stage2.empty()) throw DataError("stage 2 corpus is empty");
  const auto sequences = stage2_ids(model, corpus);
  report.examples = sequences.size();
  MiniLm& lm = model.lm();
  const UnifiedVocab& vocab = model.vocab();

  auto loss = [&](std::size_t i) {
    return lm.lm_loss(HybridSequence::from_tokens(sequences[i], lm.embedding(), vocab));
  };
  auto loss_and_grad = [&](std::size_t i) {
    const HybridSequence seq = HybridSequence::from_tokens(sequences[i], lm.embedding(), vocab);
    const MiniLm::LossGrad lg = lm.lm_loss_backward(seq);
    lm.accumulate_token_grads(seq, lg.d_embedded);
    return lg.loss;
  };
  auto mask_base_rows = [&] {
    if (!config.new_rows_only) return;
    Tensor& g = lm.embedding().weights.grad;
    std::fill(g.data(), g.data() + vocab.text_size * g.cols(), 0.0);
  };
  report.initial_loss = dataset_loss(sequences.size(), loss);
  optimize(model, config, sequences.size(), loss_and_grad, report, mask_base_rows);
  report.final_loss = dataset_loss(sequences.size(), loss);
  scope.finish();
  return report;
}

std::vector<HybridSequence> stage3_sequences(const MavenModel& model, const ToyCorpus& corpus) {
  std::vector<HybridSequence> out;
  for (const auto& pair : corpus.stage3) {
    const std::size_t img[1] = {pair.image};
    CaptionExample ex{encode_all(model, corpus, img)[0], pair.text};
    out.push_back(caption_sequence(model, ex, nullptr));
  }
  return out;
}

StageReport run_stage3(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config) {
  StageReport report;
  StageScope scope(model, config, report);
  if (corpus.stage3.empty()) throw DataError("stage 3 corpus is empty");
  std::vector<CaptionExample> examples;
  for (const auto& pair : corpus.stage3) {
    const std::size_t img[1] = {pair.image};
    examples.push_back({encode_all(model, corpus, img)[0], pair.text});
  }
  report.examples = examples.size();

  auto loss = [&](std::size_t i) { return model.lm().lm_loss(caption_sequence(model, examples[i], nullptr)); };
  auto loss_and_grad = [&](std::size_t i) {
    Projector::Cache cache;
    const HybridSequence seq = caption_sequence(model, examples[i], &cache);
    const MiniLm::LossGrad lg = model.lm().lm_loss_backward(seq);
    const std::size_t m = seq.spans.at(0).continuous_len;
    model.projector().backward(cache, lg.d_embedded.slice_rows(0, m));
    return lg.loss;
  };
  report.initial_loss = dataset_loss(examples.size(), loss);
  optimize(model, config, examples.size(), loss_and_grad, report);
  report.final_loss = dataset_loss(examples.size(), loss);
  scope.finish();
  return report;
}

StageReport run_stage4(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config) {
  StageReport report;
  StageScope scope(model, config, report);
  if (corpus.stage4.empty()) throw DataError("stage 4 corpus is empty");
  std::vector<InstructionExample> examples;
  for (const auto& s : corpus.stage4) {
    examples.push_back({encode_all(model, corpus, s.images), s.instruction, with_eos(s.response, model.vocab())});
  }
  report.examples = examples.size();

  auto build = [&](const InstructionExample& ex, std::vector<Projector::Cache>* caches) {
    return instruction_sequence(model, ex.encoded, ex.instruction, ex.response, true, caches);
  };
  auto loss = [&](std::size_t i) { return model.lm().lm_loss(build(examples[i], nullptr)); };
  auto loss_and_grad = [&](std::size_t i) {
    std::vector<Projector::Cache> caches;
    const HybridSequence seq = build(examples[i], &caches);
    MiniLm& lm = model.lm();
    const MiniLm::LossGrad lg = lm.lm_loss_backward(seq);
    lm.accumulate_token_grads(seq, lg.d_embedded);
    for (const ImageSpan& span : seq.spans) {
      model.projector().backward(caches.at(span.image_slot),
                                 lg.d_embedded.slice_rows(span.begin, span.begin + span.continuous_len));
    }
    return lg.loss;
  };
  report.initial_loss = dataset_loss(examples.size(), loss);
  optimize(model, config, examples.size(), loss_and_grad, report);
  report.final_loss = dataset_loss(examples.size(), loss);
  scope.finish();
  return report;
}

StageReport run_stage(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config) {
  switch (config.stage) {
    case 1: return run_stage1(model, corpus, config);
    case 2: return run_stage2(model, corpus, config);
    case 3: return run_stage3(model, corpus, config);
    case 4: return run_stage4(model, corpus, config);
    default: throw ConfigError("stage must be 1-4, got " + std::to_string(config.stage));
  }
}

std::vector<StageConfig> default_stage_configs(std::uint64_t seed) {
  std::vector<StageConfig> out;
  for (int s = 1; s <= 4; ++s) {
    StageConfig c = StageConfig::defaults(s);
    c.seed = seed;
    out.push_back(c);
  }
  return out;
}

RunAllResult run_all(std::uint64_t seed, const ModelConfig& model_config, const ToyCorpus& corpus,
                     std::span<const StageConfig> configs) {
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const int want = static_cast<int>(i) + 1;
    if (configs[i].stage != want) {
      throw ConfigError("stage " + std::to_string(configs[i].stage) + " scheduled where stage " +
                        std::to_string(want) + " must run");
    }
  }
  if (configs.size() != 4) throw ConfigError("run_all needs stages 1-4, got " + std::to_string(configs.size()));
  RunAllResult result;
  MavenModel model = MavenModel::initialize(model_config, seed);
  for (const StageConfig& c : configs) {
    result.reports.push_back(run_stage(model, corpus, c));
    result.checkpoints.push_back(make_checkpoint(model, c.stage, seed));
  }
  result.final_checkpoint = result.checkpoints.back();
  return result;
}

// ---------------------------------------------------------------------------
// Inference helpers

HybridSequence instruction_prefix(const MavenModel& model, std::span<const ImageGrid> images,
                                  std::span<const std::size_t> instruction, bool include_discrete) {
  std::vector<MavenModel::EncodedImage> encoded;
  for (std::size_t i = 0; i < images.size(); ++i) encoded.push_back(model.encode_image(images[i], image_name(i)));
  return instruction_sequence(model, encoded, instruction, {}, include_discrete, nullptr);
}

std::vector<std::size_t> generate_response(const MavenModel& model, std::span<const ImageGrid> images,
                                           std::span<const std::size_t> instruction, std::size_t max_tokens) {
  const HybridSequence prefix = instruction_prefix(model, images, instruction);
  std::vector<std::size_t> out = model.lm().generate_greedy(prefix, max_tokens);
  const auto eos = std::find(out.begin(), out.end(), model.vocab().eos_id());
  out.erase(eos, out.end());
  return out;
}

AttentionReport attention_report(const MavenModel& model, const ToyCorpus& corpus, std::size_t sample) {
  if (sample >= corpus.stage4.size()) throw DataError("no stage-4 sample " + std::to_string(sample));
  const InstructionSample& s = corpus.stage4[sample];
  const auto encoded = encode_all(model, corpus, s.images);
  const auto response = with_eos(s.response, model.vocab());
  const std::size_t last = model.lm().config().layers - 1;
  AttentionReport r;
  r.hybrid = attention_export(instruction_sequence(model, encoded, s.instruction, response, true, nullptr),
                              model.lm(), last);
  r.text_to_discrete = r.hybrid.text_to_segment_mass(SegmentTag::kDiscrete);
  const AttentionExport baseline =
      attention_export(instruction_sequence(model, encoded, s.instruction, response, false, nullptr), model.lm(), last);
  r.text_to_continuous = baseline.text_to_segment_mass(SegmentTag::kContinuous);
  return r;
}

}  // namespace maven
