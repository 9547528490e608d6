#include "mlmadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mlmadapt/corpus.hpp"

namespace mlmadapt {
namespace {

const char* const kFunctionWords[] = {"the", "of",   "and", "to", "in",   "for",
                                      "on",  "with", "by",  "that", "as", "is"};
constexpr uint32_t kMaxFunctionWords = 12;

const char* const kConsonants = "bdfgklmnprstvz";
const char* const kVowels = "aeiou";

// Slot kinds: 'f' fixed function word, 'a' anchored content word (one of the
// few most frequent), 'c' freshly sampled content word.
struct Slot {
    char kind;
    uint32_t index;
};

using Template = std::vector<Slot>;

struct TemplateSet {
    std::vector<Template> templates;
    std::vector<double> cumulative;
};

Slot f(uint32_t i) { return {'f', i}; }
Slot a(uint32_t i) { return {'a', i}; }
Slot c() { return {'c', 0}; }

// Heavily repeated openings and set phrases, with freer tails; weights skew
// toward the first few forms.
TemplateSet build_templates(uint32_t function_count) {
    TemplateSet set;
    std::vector<double> weights;
    const auto add = [&](double w, Template t) {
        for (Slot& slot : t)
            if (slot.kind == 'f') slot.index %= function_count;
        set.templates.push_back(std::move(t));
        weights.push_back(w);
    };
    add(0.25, {f(0), a(0), f(1), c(), c(), f(2), c(), c()});
    add(0.20, {f(0), c(), f(5), a(1), a(2), f(2), c()});
    add(0.15, {c(), f(1), c(), f(3), c(), c()});
    add(0.12, {f(0), c(), c(), f(4), c(), f(1), c(), c(), c()});
    add(0.10, {f(7), f(0), c(), f(2), c()});
    add(0.08, {f(0), a(0), a(1), f(1), c(), c(), c(), c()});
    add(0.06, {c(), c(), f(2), c(), f(1), c(), c(), f(3), c(), c()});
    add(0.04, {f(9), c(), f(0), c(), c(), f(6), c(), f(1), c(), c(), c(), c()});

    double total = 0.0;
    for (double w : weights) total += w;
    double running = 0.0;
    for (double w : weights) {
        running += w / total;
        set.cumulative.push_back(running);
    }
    set.cumulative.back() = 1.0;
    return set;
}

std::string make_content_word(uint32_t index) {
    // Two or three syllables keyed by the word index; collisions are resolved
    // by the caller via suffixing.
    RngStream rng(mix_chain(mix64(0x776F7264ULL), index));
    const uint32_t syllables = 2 + static_cast<uint32_t>(rng.next_below(2));
    std::string word;
    for (uint32_t s = 0; s < syllables; ++s) {
        word += kConsonants[rng.next_below(14)];
        word += kVowels[rng.next_below(5)];
    }
    return word;
}

struct ZipfTable {
    std::vector<double> cumulative;
};

ZipfTable build_zipf(uint32_t n) {
    ZipfTable table;
    table.cumulative.resize(n);
    double total = 0.0;
    for (uint32_t i = 0; i < n; ++i) total += 1.0 / std::pow(i + 1.0, 1.1);
    double running = 0.0;
    for (uint32_t i = 0; i < n; ++i) {
        running += 1.0 / std::pow(i + 1.0, 1.1) / total;
        table.cumulative[i] = running;
    }
    table.cumulative[n - 1] = 1.0;
    return table;
}

uint32_t sample_cumulative(const std::vector<double>& cumulative, double u) {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) return static_cast<uint32_t>(cumulative.size() - 1);
    return static_cast<uint32_t>(it - cumulative.begin());
}

}  // namespace

void SynthConfig::validate() const {
    if (sentences < 1) throw ConfigError("sentence count must be at least 1");
    if (vocab < 10) throw ConfigError("vocab must be at least 10 words");
}

std::vector<std::string> synth_vocabulary(const SynthConfig& cfg) {
    cfg.validate();
    const uint32_t function_count = std::min(kMaxFunctionWords, cfg.vocab / 3);
    std::vector<std::string> words;
    std::set<std::string> seen;
    for (uint32_t i = 0; i < function_count; ++i) {
        words.emplace_back(kFunctionWords[i]);
        seen.insert(words.back());
    }
    for (uint32_t i = 0; words.size() < cfg.vocab; ++i) {
        std::string word = make_content_word(i);
        while (seen.count(word)) word += kVowels[word.size() % 5];
        seen.insert(word);
        words.push_back(std::move(word));
    }
    return words;
}

std::string synth_sentence(const SynthConfig& cfg, const std::vector<std::string>& words,
                           uint64_t index) {
    const uint32_t function_count = std::min(kMaxFunctionWords, cfg.vocab / 3);
    const uint32_t content_count = cfg.vocab - function_count;
    static thread_local TemplateSet templates;  // rebuilt when shape changes
    static thread_local uint32_t templates_for = 0;
    if (templates_for != function_count) {
        templates = build_templates(function_count);
        templates_for = function_count;
    }
    static thread_local ZipfTable zipf;
    static thread_local uint32_t zipf_for = 0;
    if (zipf_for != content_count) {
        zipf = build_zipf(content_count);
        zipf_for = content_count;
    }

    RngStream rng(mix_chain(mix64(cfg.seed), index + 1));
    const Template& tpl =
        templates.templates[sample_cumulative(templates.cumulative, rng.next_unit())];
    std::ostringstream out;
    bool first = true;
    for (const Slot& slot : tpl) {
        uint32_t word_index;
        switch (slot.kind) {
            case 'f': word_index = slot.index; break;
            case 'a': word_index = function_count + (slot.index % content_count); break;
            default:
                word_index =
                    function_count + sample_cumulative(zipf.cumulative, rng.next_unit());
        }
        if (!first) out << ' ';
        out << words[word_index];
        first = false;
    }
    return out.str();
}

SynthStats gen_synthetic_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const std::vector<std::string> words = synth_vocabulary(cfg);

    {
        std::ofstream vocab_out(out_dir / "vocab.txt", std::ios::binary);
        if (!vocab_out) throw DataError("cannot write " + (out_dir / "vocab.txt").string());
        for (const std::string& word : words) vocab_out << word << "\n";
    }

    std::ofstream corpus_out(out_dir / "corpus.jsonl", std::ios::binary);
    if (!corpus_out) throw DataError("cannot write " + (out_dir / "corpus.jsonl").string());
    SynthStats stats;
    stats.vocab_words = static_cast<uint32_t>(words.size());
    char id_buf[32];
    for (uint64_t i = 0; i < cfg.sentences; ++i) {
        std::snprintf(id_buf, sizeof id_buf, "syn-%07llu",
                      static_cast<unsigned long long>(i));
        SentenceRecord rec;
        rec.id = id_buf;
        rec.text = synth_sentence(cfg, words, i);
        rec.source_tag = "synthetic";
        corpus_out << record_to_line(rec) << "\n";
        stats.sentences += 1;
        stats.tokens += 1 + std::count(rec.text.begin(), rec.text.end(), ' ');
    }
    if (!corpus_out) throw DataError("short write to " + (out_dir / "corpus.jsonl").string());
    return stats;
}

}  // namespace mlmadapt
