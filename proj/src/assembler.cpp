#include "maven/assembler.hpp"

#include <json.hpp>

namespace maven {

void MultimodalInput::validate() const {
  std::vector<int> image_refs(image_ids.size(), 0);
  std::vector<int> text_refs(text_segments.size(), 0);
  for (const Item& item : plan) {
    auto& refs = item.kind == Kind::kImage ? image_refs : text_refs;
    if (item.index >= refs.size()) {
      throw PlanError(std::string(item.kind == Kind::kImage ? "image" : "text") + " reference " +
                      std::to_string(item.index) + " out of range");
    }
    ++refs[item.index];
  }
  for (std::size_t i = 0; i < image_refs.size(); ++i) {
    if (image_refs[i] != 1) {
      throw PlanError("image " + std::to_string(i) + " referenced " + std::to_string(image_refs[i]) + " times");
    }
  }
  for (std::size_t i = 0; i < text_refs.size(); ++i) {
    if (text_refs[i] != 1) {
      throw PlanError("text segment " + std::to_string(i) + " referenced " + std::to_string(text_refs[i]) + " times");
    }
  }
}

HybridSequence assemble_image_block(const ReducedSequence& reduced, const DiscreteTokens& discrete,
                                    const Tensor& projected, const EmbeddingTable& table,
                                    const UnifiedVocab& vocab) {
  if (reduced.image_id != discrete.image_id) {
    throw DataError("continuous tokens of '" + reduced.image_id + "' paired with discrete tokens of '" +
                    discrete.image_id + "'");
  }
  if (projected.rows() != reduced.length() || projected.cols() != table.dim()) {
    throw ShapeError("projected block " + dims_to_string(projected.dims()) + " for " +
                     std::to_string(reduced.length()) + " kept patches");
  }
  const std::vector<std::size_t> ids = to_unified(discrete.indices, vocab);
  HybridSequence block;
  const Tensor parts[2] = {projected, embed(ids, table)};
  block.embedded = concat_rows(parts);
  block.tags.assign(reduced.length(), SegmentTag::kContinuous);
  block.tags.insert(block.tags.end(), ids.size(), SegmentTag::kDiscrete);
  block.token_ids.assign(reduced.length(), kNoToken);
  block.token_ids.insert(block.token_ids.end(), ids.begin(), ids.end());
  block.targets = block.token_ids;
  block.spans.push_back(ImageSpan{0, reduced.image_id, 0, reduced.length(), ids.size()});
  return block;
}

HybridSequence assemble_image_block(const ReducedSequence& reduced, const DiscreteTokens& discrete,
                                    const Projector& projector, const EmbeddingTable& table,
                                    const UnifiedVocab& vocab) {
  return assemble_image_block(reduced, discrete, projector.forward(reduced.tokens), table, vocab);
}

HybridSequence assemble_continuous_block(const ReducedSequence& reduced, const Tensor& projected) {
  if (projected.rows() != reduced.length()) {
    throw ShapeError("projected block " + dims_to_string(projected.dims()) + " for " +
                     std::to_string(reduced.length()) + " kept patches");
  }
  HybridSequence block;
  block.embedded = projected;
  block.tags.assign(reduced.length(), SegmentTag::kContinuous);
  block.token_ids.assign(reduced.length(), kNoToken);
  block.targets = block.token_ids;
  block.spans.push_back(ImageSpan{0, reduced.image_id, 0, reduced.length(), 0});
  return block;
}

HybridSequence interleave(const MultimodalInput& input, std::span<const HybridSequence> blocks,
                          const EmbeddingTable& table, const UnifiedVocab& vocab, InterleaveOptions options) {
  input.validate();
  if (blocks.size() != input.image_ids.size()) throw PlanError("one block per image required");
  std::vector<HybridSequence> parts;
  for (std::size_t p = 0; p < input.plan.size(); ++p) {
    const auto& item = input.plan[p];
    if (item.kind == MultimodalInput::Kind::kImage) {
      HybridSequence block = blocks[item.index];
      for (ImageSpan& s : block.spans) {
        s.image_slot = item.index;
        s.image_id = input.image_ids[item.index];
      }
      parts.push_back(std::move(block));
      if (options.separators && p + 1 < input.plan.size()) {
        const std::size_t sep[1] = {vocab.separator_id()};
        parts.push_back(HybridSequence::from_tokens(sep, table, vocab));
      }
    } else {
      const auto& ids = input.text_segments[item.index];
      for (std::size_t id : ids) {
        if (!vocab.is_text(id)) throw PlanError("text segment holds non-text id " + std::to_string(id));
      }
      parts.push_back(HybridSequence::from_tokens(ids, table, vocab));
    }
  }
  HybridSequence out = concat_sequences(parts);
  out.validate();
  return out;
}

std::size_t Geometry::continuous_len() const {
  if (patch == 0 || width % patch != 0 || height % patch != 0) {
    throw ConfigError("image " + std::to_string(width) + "x" + std::to_string(height) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  return (width / patch) * (height / patch);
}

std::string BudgetReport::to_json_line() const {
  nlohmann::ordered_json j;
  j["alpha"] = alpha;
  j["m"] = continuous_total;
  j["nd"] = discrete_total;
  j["visual_total"] = visual_total;
  j["quadratic_ratio"] = quadratic_ratio;
  return j.dump();
}

BudgetReport budget_report(const Geometry& geometry, double alpha, std::size_t images, std::size_t text_len) {
  const std::size_t n_c = geometry.continuous_len();
  BudgetReport r;
  r.alpha = alpha;
  const ImageBudget per{n_c, keep_count(n_c, alpha), geometry.discrete_len};
  r.images.assign(images, per);
  r.continuous_total = images * per.kept;
  r.discrete_total = images * per.discrete;
  r.text_total = text_len;
  r.visual_total = r.continuous_total + r.discrete_total;
  r.total = r.visual_total + text_len;
  r.baseline_total = images * n_c + text_len;
  const double ratio = r.baseline_total ? static_cast<double>(r.total) / static_cast<double>(r.baseline_total) : 0.0;
  r.quadratic_ratio = ratio * ratio;
  return r;
}

std::vector<BudgetReport> budget_report(const Geometry& geometry, std::span<const double> alphas, std::size_t images,
                                        std::size_t text_len) {
  std::vector<BudgetReport> out;
  for (double a : alphas) out.push_back(budget_report(geometry, a, images, text_len));
  return out;
}

}  // namespace maven
