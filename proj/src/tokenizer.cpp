#include "mlmadapt/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace mlmadapt {

void TokenizerAdapter::validate() const {
    const auto& sp = specials();
    std::set<uint32_t> ids{sp.pad, sp.unknown, sp.mask};
    if (sp.delimiter) ids.insert(*sp.delimiter);
    if (ids.size() != sp.count()) throw ConfigError("tokenizer special ids are not distinct");
    for (uint32_t id : ids) {
        if (id >= vocab_size()) throw ConfigError("tokenizer special id outside vocab");
    }
}

ToyTokenizer::ToyTokenizer(const std::vector<std::string>& words, uint64_t digest)
    : words_(words), digest_(digest) {
    specials_.pad = kPadId;
    specials_.unknown = kUnknownId;
    specials_.mask = kMaskId;
    specials_.delimiter = kDelimiterId;
    index_.reserve(words_.size());
    for (size_t i = 0; i < words_.size(); ++i) {
        auto [it, fresh] = index_.emplace(words_[i], static_cast<uint32_t>(4 + i));
        if (!fresh) throw ConfigError("duplicate word in toy vocab: '" + words_[i] + "'");
    }
    if (digest_ == 0) {
        uint64_t h = kFnvOffset;
        for (const auto& w : words_) {
            h = fnv1a64(w, h);
            // A bare "\n" literal would bind to the (pointer, length)
            // overload with the seed misread as the byte count.
            h = fnv1a64(std::string_view("\n"), h);
        }
        digest_ = h;
    }
}

ToyTokenizer ToyTokenizer::load(const std::filesystem::path& vocab_file) {
    std::ifstream in(vocab_file);
    if (!in) throw ConfigError("cannot open toy vocab file: " + vocab_file.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        auto w = trim(line);
        if (!w.empty()) words.push_back(std::move(w));
    }
    if (words.empty()) throw ConfigError("toy vocab file is empty: " + vocab_file.string());
    return ToyTokenizer(words, file_digest(vocab_file));
}

void ToyTokenizer::save_vocab(const std::vector<std::string>& words,
                              const std::filesystem::path& vocab_file) {
    std::ofstream out(vocab_file, std::ios::binary);
    if (!out) throw DataError("cannot write vocab file: " + vocab_file.string());
    for (const auto& w : words) out << w << '\n';
}

std::vector<uint32_t> ToyTokenizer::encode(std::string_view text) const {
    std::vector<uint32_t> ids;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) i++;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) i++;
        if (i > start) {
            auto it = index_.find(std::string(text.substr(start, i - start)));
            ids.push_back(it != index_.end() ? it->second : kUnknownId);
        }
    }
    return ids;
}

std::string ToyTokenizer::decode(std::span<const uint32_t> ids) const {
    std::ostringstream out;
    bool first = true;
    for (uint32_t id : ids) {
        std::string piece;
        switch (id) {
        case kPadId: piece = "[PAD]"; break;
        case kUnknownId: piece = "[UNK]"; break;
        case kMaskId: piece = "[MASK]"; break;
        case kDelimiterId: piece = "[SEP]"; break;
        default:
            if (id - 4 >= words_.size()) throw DataError("token id outside vocab in decode");
            piece = words_[id - 4];
        }
        if (!first) out << ' ';
        out << piece;
        first = false;
    }
    return out.str();
}

std::unique_ptr<TokenizerAdapter> resolve_tokenizer(const std::string& spec) {
    constexpr std::string_view kToyPrefix = "toy:";
    if (spec.rfind(kToyPrefix, 0) == 0) {
        auto tok = std::make_unique<ToyTokenizer>(ToyTokenizer::load(spec.substr(kToyPrefix.size())));
        tok->validate();
        return tok;
    }
    throw ConfigError("unknown tokenizer spec: '" + spec + "' (expected toy:<vocab-file>)");
}

}  // namespace mlmadapt
