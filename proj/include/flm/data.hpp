#pragma once
// Deterministic synthetic captioned-attributes dataset: every sample pairs an
// attribute vector (stand-in for an image) with a templated caption that
// verbalizes all four attributes.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace flm {

// Reserved token ids.
inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kCls = 4;
inline constexpr int kNumReserved = 5;

inline constexpr int kNumColors = 8;
inline constexpr int kNumShapes = 6;
inline constexpr int kNumCounts = 5;  // count attribute takes values 1..5
inline constexpr int kNumBackgrounds = 4;
inline constexpr std::array<int, 4> kAttrCardinalities = {kNumColors, kNumShapes, kNumCounts,
                                                          kNumBackgrounds};

inline constexpr int kMaxCaptionLen = 16;

struct Attributes {
  int color = 0;       // 0..7
  int shape = 0;       // 0..5
  int count = 1;       // 1..5
  int background = 0;  // 0..3

  // Zero-based field value, field index 0..3.
  int field(int f) const {
    switch (f) {
      case 0: return color;
      case 1: return shape;
      case 2: return count - 1;
      default: return background;
    }
  }
  bool operator==(const Attributes&) const = default;
};

struct Vocab {
  std::vector<std::string> words;  // index = token id; reserved ids 0..4
  int size() const { return static_cast<int>(words.size()); }
  int id_of(const std::string& w) const;
  const std::string& word(int id) const { return words[id]; }
  // Token id of the word that verbalizes attribute field f at value v (0-based v).
  int attr_word_id(int f, int v) const;
};

struct Sample {
  Attributes attrs;
  int template_id = 0;
  std::vector<int> caption;  // token ids, no BOS/EOS, length <= kMaxCaptionLen
  int64_t id = 0;            // (attrs, template) identity
  std::string text;          // caption as words
};

struct Dataset {
  Vocab vocab;
  std::vector<Sample> train;
  std::vector<Sample> val;
};

// Padded batch with BOS prepended and EOS appended per row.
struct TokenBatch {
  int batch = 0;
  int width = 0;                         // max_len + 2
  std::vector<int> tokens;               // batch x width, PAD-filled
  std::vector<int> lengths;              // real token counts (no BOS/EOS/PAD)
  std::vector<Attributes> attrs;

  std::vector<int> caption_of(int b) const {
    const int* row = tokens.data() + static_cast<size_t>(b) * width;
    return std::vector<int>(row + 1, row + 1 + lengths[b]);
  }
};

int num_templates();
Vocab build_vocab();
std::vector<int> render_caption(const Vocab& v, const Attributes& a, int template_id);
std::string render_text(const Vocab& v, const Attributes& a, int template_id);

Dataset gen_dataset(uint64_t seed, int n_train, int n_val);

TokenBatch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices);

// One epoch of shuffled batch index lists.
std::vector<std::vector<int>> epoch_batches(int n_samples, int batch_size, std::mt19937_64& rng);

}  // namespace flm
