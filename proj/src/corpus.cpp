#include "maven/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "maven/error.hpp"
#include "maven/tensor_io.hpp"

namespace maven {

namespace fs = std::filesystem;

std::size_t quadrant_word(const Rect& rect, std::size_t width, std::size_t height) {
  const bool right = 2 * rect.x0 + rect.width >= width;
  const bool bottom = 2 * rect.y0 + rect.height >= height;
  if (bottom) return right ? words::kBottomRight : words::kBottomLeft;
  return right ? words::kTopRight : words::kTopLeft;
}

ToyCorpus build_toy_corpus(std::size_t count, const SynthConfig& synth, const UnifiedVocab& vocab, Rng rng,
                           const CorpusConfig& config) {
  if (vocab.text_size < words::kFirstFreeWord + 3) throw ConfigError("text vocabulary too small for the toy language");
  ToyCorpus c;
  c.synth = synth;
  c.samples = synth_masks(count, synth, rng.split("samples"));

  // Stage-2 strings draw from every word so that each text row of the tied
  // embedding/head sees training signal before stage 3.
  const std::size_t word_count = vocab.separator_id() - words::kTopLeft;
  Rng text_rng = rng.split("stage2.text");
  for (std::size_t i = 0; i < std::min(config.stage2_pairs, count); ++i) {
    TextPair p{i, {}};
    for (std::size_t t = 0; t < config.text_len; ++t) p.text.push_back(words::kTopLeft + text_rng.below(word_count));
    c.stage2.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < std::min(config.stage3_pairs, count); ++i) {
    const Rect& r = c.samples[i].rect;
    c.stage3.push_back({i, {quadrant_word(r, synth.width, synth.height)}});
  }
  const std::size_t pool = std::min(config.stage4_pool, count);
  Rng pick = rng.split("stage4.images");
  for (std::size_t i = 0; pool > 0 && i < config.stage4_samples; ++i) {
    InstructionSample s;
    const std::size_t k = 1 + i % 3;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t img = pick.below(pool);
      s.images.push_back(img);
      const Rect& r = c.samples[img].rect;
      s.response.push_back(quadrant_word(r, synth.width, synth.height));
    }
    s.instruction = {words::kWhere};
    c.stage4.push_back(std::move(s));
  }
  return c;
}

namespace {

std::string join(const std::vector<std::size_t>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<std::size_t> split_ids(const std::string& field) {
  std::vector<std::size_t> out;
  std::istringstream in(field);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoul(tok));
  }
  return out;
}

std::string sample_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::vector<std::string> write_corpus(const fs::path& dir, const ToyCorpus& corpus) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory " + dir.string());
  std::vector<std::string> written;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const std::string name = sample_name(i);
    write_tensor(dir / "images" / (name + ".mvt"), corpus.samples[i].image.pixels);
    write_mask(dir / "masks" / (name + ".mvm"), corpus.samples[i].mask);
    written.push_back("images/" + name + ".mvt");
    written.push_back("masks/" + name + ".mvm");
  }
  std::string s2 = "# image text\n", s3 = "# image caption\n", s4 = "# images instruction response\n";
  for (const auto& p : corpus.stage2) s2 += std::to_string(p.image) + " " + join(p.text) + "\n";
  for (const auto& p : corpus.stage3) s3 += std::to_string(p.image) + " " + join(p.text) + "\n";
  for (const auto& s : corpus.stage4) {
    s4 += join(s.images) + " " + join(s.instruction) + " " + join(s.response) + "\n";
  }
  // Rectangles are needed to rebuild captions; they are also exactly the masks.
  std::string rects = "# x0 y0 width height\n";
  for (const auto& s : corpus.samples) {
    rects += std::to_string(s.rect.x0) + " " + std::to_string(s.rect.y0) + " " + std::to_string(s.rect.width) + " " +
             std::to_string(s.rect.height) + "\n";
  }
  write_text_atomic(dir / "stage2.txt", s2);
  write_text_atomic(dir / "stage3.txt", s3);
  write_text_atomic(dir / "stage4.txt", s4);
  write_text_atomic(dir / "rects.txt", rects);
  for (const char* f : {"rects.txt", "stage2.txt", "stage3.txt", "stage4.txt"}) written.emplace_back(f);
  std::sort(written.begin(), written.end());
  return written;
}

ToyCorpus read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw PreconditionError("no dataset at " + dir.string());
  ToyCorpus c;
  const auto rects = read_lines(dir / "rects.txt");
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const std::string name = sample_name(i);
    SynthSample s{ImageGrid::from_tensor(read_tensor(dir / "images" / (name + ".mvt"))),
                  read_mask(dir / "masks" / (name + ".mvm")), {}};
    std::istringstream in(rects[i]);
    in >> s.rect.x0 >> s.rect.y0 >> s.rect.width >> s.rect.height;
    if (!in) throw DataError("bad rectangle line " + std::to_string(i));
    c.samples.push_back(std::move(s));
  }
  if (!c.samples.empty()) {
    c.synth.width = c.samples[0].image.width;
    c.synth.height = c.samples[0].image.height;
  }
  auto check_image = [&](std::size_t img) {
    if (img >= c.samples.size()) throw DataError("corpus references missing image " + std::to_string(img));
    return img;
  };
  for (const auto& line : read_lines(dir / "stage2.txt")) {
    std::istringstream in(line);
    std::size_t img;
    std::string ids;
    in >> img >> ids;
    c.stage2.push_back({check_image(img), split_ids(ids)});
  }
  for (const auto& line : read_lines(dir / "stage3.txt")) {
    std::istringstream in(line);
    std::size_t img;
    std::string ids;
    in >> img >> ids;
    c.stage3.push_back({check_image(img), split_ids(ids)});
  }
  for (const auto& line : read_lines(dir / "stage4.txt")) {
    std::istringstream in(line);
    std::string imgs, instr, resp;
    in >> imgs >> instr >> resp;
    InstructionSample s{split_ids(imgs), split_ids(instr), split_ids(resp)};
    for (std::size_t i : s.images) check_image(i);
    c.stage4.push_back(std::move(s));
  }
  return c;
}

}  // namespace maven
