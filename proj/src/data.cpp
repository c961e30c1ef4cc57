#include "flm/data.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace flm {
namespace {

const std::array<const char*, kNumColors> kColors = {"red",    "blue",  "green", "yellow",
                                                     "purple", "orange", "white", "black"};
const std::array<const char*, kNumShapes> kShapes = {"cube",    "sphere",  "cone",
                                                     "torus",   "pyramid", "cylinder"};
const std::array<const char*, kNumCounts> kCounts = {"one", "two", "three", "four", "five"};
const std::array<const char*, kNumBackgrounds> kBackgrounds = {"plain", "checker", "forest",
                                                               "night"};

// Slot markers: {C}=count word, {K}=color word, {S}=shape word, {B}=background
// word. First literal of each template is unique so a prefix identifies the
// template immediately; slot order varies across templates so left context
// alone does not determine the next word.
const std::vector<std::vector<const char*>> kTemplates = {
    {"a", "photo", "of", "{C}", "{K}", "{S}", "on", "a", "{B}", "background"},
    {"this", "{B}", "scene", "shows", "{C}", "{S}", "in", "{K}"},
    {"against", "the", "{B}", "backdrop", "stand", "{C}", "{K}", "{S}"},
    {"{C}", "{S}", "painted", "{K}", "rest", "on", "the", "{B}", "field"},
    {"the", "{B}", "ground", "holds", "{C}", "{S}", "of", "{K}", "tone"},
    {"flat", "{B}", "space", "frames", "{C}", "{K}", "{S}"},
    {"somewhere", "{C}", "{K}", "{S}", "drift", "past", "a", "{B}", "horizon"},
    {"render", "of", "{C}", "{S}", "in", "{K}", "against", "a", "{B}", "canvas"},
    {"beneath", "a", "{B}", "sky", "sit", "{C}", "{S}", "shaded", "{K}"},
};

bool is_slot(const char* w) { return w[0] == '{'; }

const char* slot_word(const Attributes& a, const char* slot) {
  switch (slot[1]) {
    case 'C': return kCounts[a.count - 1];
    case 'K': return kColors[a.color];
    case 'S': return kShapes[a.shape];
    case 'B': return kBackgrounds[a.background];
  }
  throw std::logic_error("unknown slot");
}

}  // namespace

int num_templates() { return static_cast<int>(kTemplates.size()); }

int Vocab::id_of(const std::string& w) const {
  for (int i = 0; i < size(); ++i)
    if (words[i] == w) return i;
  throw std::out_of_range("word not in vocabulary: " + w);
}

int Vocab::attr_word_id(int f, int v) const {
  switch (f) {
    case 0: return id_of(kColors.at(v));
    case 1: return id_of(kShapes.at(v));
    case 2: return id_of(kCounts.at(v));
    case 3: return id_of(kBackgrounds.at(v));
  }
  throw std::out_of_range("attribute field out of range");
}

Vocab build_vocab() {
  Vocab v;
  v.words = {"<pad>", "<mask>", "<bos>", "<eos>", "<cls>"};
  auto push = [&v](const char* w) {
    for (const auto& existing : v.words)
      if (existing == w) return;
    v.words.emplace_back(w);
  };
  for (auto w : kColors) push(w);
  for (auto w : kShapes) push(w);
  for (auto w : kCounts) push(w);
  for (auto w : kBackgrounds) push(w);
  for (const auto& tpl : kTemplates)
    for (auto w : tpl)
      if (!is_slot(w)) push(w);
  return v;
}

std::vector<int> render_caption(const Vocab& v, const Attributes& a, int template_id) {
  const auto& tpl = kTemplates.at(template_id);
  std::vector<int> ids;
  ids.reserve(tpl.size());
  for (auto w : tpl) ids.push_back(v.id_of(is_slot(w) ? slot_word(a, w) : w));
  return ids;
}

std::string render_text(const Vocab& v, const Attributes& a, int template_id) {
  const auto& tpl = kTemplates.at(template_id);
  std::string s;
  for (auto w : tpl) {
    if (!s.empty()) s.push_back(' ');
    s += is_slot(w) ? slot_word(a, w) : w;
  }
  return s;
}

Dataset gen_dataset(uint64_t seed, int n_train, int n_val) {
  if (n_train < 1 || n_val < 1) throw std::invalid_argument("gen_dataset: sizes must be >= 1");
  Dataset ds;
  ds.vocab = build_vocab();

  // Enumerate every (attributes, template) combination, shuffle, and split so
  // the two pools are disjoint by sample id.
  const int n_templates = num_templates();
  std::vector<int64_t> combo;
  combo.reserve(static_cast<size_t>(kNumColors) * kNumShapes * kNumCounts * kNumBackgrounds *
                n_templates);
  for (int c = 0; c < kNumColors; ++c)
    for (int s = 0; s < kNumShapes; ++s)
      for (int n = 1; n <= kNumCounts; ++n)
        for (int b = 0; b < kNumBackgrounds; ++b)
          for (int t = 0; t < n_templates; ++t)
            combo.push_back((((static_cast<int64_t>(c) * kNumShapes + s) * kNumCounts + (n - 1)) *
                                 kNumBackgrounds +
                             b) *
                                n_templates +
                            t);
  std::mt19937_64 rng(seed);
  std::shuffle(combo.begin(), combo.end(), rng);

  const size_t val_pool = combo.size() / 6;
  auto decode = [&ds](int64_t id) {
    Sample smp;
    smp.id = id;
    smp.template_id = static_cast<int>(id % num_templates());
    int64_t rest = id / num_templates();
    smp.attrs.background = static_cast<int>(rest % kNumBackgrounds);
    rest /= kNumBackgrounds;
    smp.attrs.count = static_cast<int>(rest % kNumCounts) + 1;
    rest /= kNumCounts;
    smp.attrs.shape = static_cast<int>(rest % kNumShapes);
    rest /= kNumShapes;
    smp.attrs.color = static_cast<int>(rest);
    smp.caption = render_caption(ds.vocab, smp.attrs, smp.template_id);
    smp.text = render_text(ds.vocab, smp.attrs, smp.template_id);
    return smp;
  };

  ds.val.reserve(n_val);
  for (int i = 0; i < n_val; ++i) ds.val.push_back(decode(combo[i % val_pool]));
  ds.train.reserve(n_train);
  const size_t train_pool = combo.size() - val_pool;
  for (int i = 0; i < n_train; ++i)
    ds.train.push_back(decode(combo[val_pool + (i % train_pool)]));
  return ds;
}

TokenBatch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices) {
  TokenBatch b;
  b.batch = static_cast<int>(indices.size());
  int max_len = 0;
  for (int i : indices) max_len = std::max(max_len, static_cast<int>(samples[i].caption.size()));
  b.width = max_len + 2;
  b.tokens.assign(static_cast<size_t>(b.batch) * b.width, kPad);
  for (int r = 0; r < b.batch; ++r) {
    const Sample& s = samples[indices[r]];
    int* row = b.tokens.data() + static_cast<size_t>(r) * b.width;
    row[0] = kBos;
    for (size_t j = 0; j < s.caption.size(); ++j) row[1 + j] = s.caption[j];
    row[1 + s.caption.size()] = kEos;
    b.lengths.push_back(static_cast<int>(s.caption.size()));
    b.attrs.push_back(s.attrs);
  }
  return b;
}

std::vector<std::vector<int>> epoch_batches(int n_samples, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw std::invalid_argument("epoch_batches: batch_size must be >= 1");
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n_samples; start += batch_size) {
    const int end = std::min(n_samples, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

}  // namespace flm
